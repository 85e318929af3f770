//! Synthetic-data quality diagnostics.
//!
//! The similarity score is an inverse Kullback-Leibler construction over
//! per-column marginals: each column is discretized (ten equal-width bins over
//! the pooled range for continuous columns, native levels for discrete ones),
//! counts get add-one smoothing, and the score is
//!
//! ```text
//! score = 1 / (1 + mean_j KL(original_j || synthetic_j))
//! ```
//!
//! in natural log, so identical datasets score 1 and the score falls toward 0
//! as marginals diverge. The direction is fixed (original relative to
//! synthetic) and only marginals enter: two datasets with identical marginals
//! but different joints score 1 by construction.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::table::Table;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    /// Inverse-KL similarity in [0, 1]; higher means more similar marginals.
    pub ikld: f64,
    /// Synthetic rows that are bit-exact copies of an original row.
    pub exact_copies: usize,
    pub per_column_kl: BTreeMap<String, f64>,
}

/// Per-column smoothed KL divergences of original against synthetic marginals.
pub fn per_column_kl(
    original: &Table,
    synthetic: &Table,
    bins: usize,
) -> Result<BTreeMap<String, f64>> {
    if original.schema() != synthetic.schema() {
        return Err(Error::SchemaMismatch(
            "quality diagnostics need identical schemas".into(),
        ));
    }
    if original.n_rows() == 0 || synthetic.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    if bins < 2 {
        return Err(Error::InvalidConfig("need at least 2 bins".into()));
    }
    let schema = original.schema();
    let mut out = BTreeMap::new();
    for col in 0..schema.len() {
        let (p_counts, q_counts) = if let Some(n_levels) = schema.kind(col).level_count() {
            let count = |t: &Table| {
                let mut c = vec![0usize; n_levels];
                for &v in t.column(col) {
                    c[v as usize] += 1;
                }
                c
            };
            (count(original), count(synthetic))
        } else {
            // Equal-width bins over the pooled range.
            let lo = original
                .column(col)
                .iter()
                .chain(synthetic.column(col))
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let hi = original
                .column(col)
                .iter()
                .chain(synthetic.column(col))
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo).max(f64::MIN_POSITIVE);
            let bin_of = |v: f64| (((v - lo) / width * bins as f64) as usize).min(bins - 1);
            let count = |t: &Table| {
                let mut c = vec![0usize; bins];
                for &v in t.column(col) {
                    c[bin_of(v)] += 1;
                }
                c
            };
            (count(original), count(synthetic))
        };
        out.insert(
            schema.name(col).to_string(),
            smoothed_kl(&p_counts, &q_counts),
        );
    }
    Ok(out)
}

/// KL(p || q) with add-one smoothing on both count vectors, natural log.
fn smoothed_kl(p_counts: &[usize], q_counts: &[usize]) -> f64 {
    let cells = p_counts.len() as f64;
    let p_total: usize = p_counts.iter().sum();
    let q_total: usize = q_counts.iter().sum();
    let mut kl = 0.0;
    for (&pc, &qc) in p_counts.iter().zip(q_counts) {
        let p = (pc as f64 + 1.0) / (p_total as f64 + cells);
        let q = (qc as f64 + 1.0) / (q_total as f64 + cells);
        kl += p * (p / q).ln();
    }
    kl.max(0.0)
}

/// The inverse-KL similarity score.
pub fn ikld(original: &Table, synthetic: &Table, bins: usize) -> Result<f64> {
    let kls = per_column_kl(original, synthetic, bins)?;
    let mean_kl = kls.values().sum::<f64>() / kls.len() as f64;
    Ok(1.0 / (1.0 + mean_kl))
}

/// Number of synthetic rows equal (all fields, continuous values bit-exact)
/// to some original row.
pub fn count_exact_copies(original: &Table, synthetic: &Table) -> Result<usize> {
    if original.schema() != synthetic.schema() {
        return Err(Error::SchemaMismatch(
            "copy counting needs identical schemas".into(),
        ));
    }
    let width = original.schema().len();
    let key = |t: &Table, row: usize| -> Vec<u64> {
        (0..width).map(|c| t.value(row, c).to_bits()).collect()
    };
    let originals: HashSet<Vec<u64>> = (0..original.n_rows())
        .map(|row| key(original, row))
        .collect();
    Ok((0..synthetic.n_rows())
        .filter(|&row| originals.contains(&key(synthetic, row)))
        .count())
}

/// Bundles the diagnostics into one report.
pub fn quality_report(original: &Table, synthetic: &Table, bins: usize) -> Result<QualityReport> {
    let per_column_kl = per_column_kl(original, synthetic, bins)?;
    let mean_kl = per_column_kl.values().sum::<f64>() / per_column_kl.len() as f64;
    Ok(QualityReport {
        ikld: 1.0 / (1.0 + mean_kl),
        exact_copies: count_exact_copies(original, synthetic)?,
        per_column_kl,
    })
}
