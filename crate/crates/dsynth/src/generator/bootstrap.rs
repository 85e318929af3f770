//! Kernel-smoothed bootstrap with deliberately slow statistical convergence.
//!
//! Sampling resamples training rows and convolves continuous columns with
//! Gaussian kernel noise of bandwidth
//!
//! ```text
//! h_j = bandwidth_rule * 1.06 * sd_j * n^(-1/5)
//! ```
//!
//! (`sd_j` the maximum-likelihood standard deviation of the training column,
//! so the per-draw variance is exactly `sd_j^2 + h_j^2`).
//!
//! A plain smoothed bootstrap is root-n consistent for means and coefficients,
//! which is *not* how flexible trained generators behave: their fitted
//! distribution misses the training sample by a regularisation error that
//! shrinks much slower than root-n. To emulate that regime the fit also draws
//! random drift terms, once per fit, all scaled to the kernel rate `n^(-1/5)`
//! and all proportional to `bandwidth_rule`:
//!
//! * a mean drift `delta_j ~ N(0, h_j^2)` added to continuous column `j`
//!   (invisible to within-sample variances, so the convolution identity above
//!   still holds);
//! * an association drift `gamma_{j,d} ~ N(0, (0.17 h_j)^2)` per discrete
//!   column `d`, adding `gamma_{j,d} * z_d(row)` to continuous column `j`,
//!   where `z_d` is the standardized level code; this perturbs conditional
//!   means such as `E(Y | X)` without moving the marginal mean;
//! * a level drift for every discrete column: per joint level of the preceding
//!   discrete columns, the level distribution `p` is replaced by a perturbed
//!   `p'` at total-variation scale `0.15 * bandwidth_rule * 1.06 * n^(-1/5)`,
//!   realized by an optimal keep-or-move coupling so rows keep their level
//!   whenever possible. Levels absent from a stratum stay absent, so the
//!   generator never invents unseen level combinations.
//!
//! With `bandwidth_rule = 0` every term vanishes and sampling is a plain
//! bootstrap that replicates training rows exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{draw_normal, uniform53, uniform_below, ChaCha8Rng};
use crate::table::{Schema, Table};

use super::Generator;

/// Association-drift scale relative to `h_j`.
const ASSOC_DRIFT_FRAC: f64 = 0.17;
/// Level-drift scale relative to `bandwidth_rule * 1.06 * n^(-1/5)`.
const LEVEL_DRIFT_FRAC: f64 = 0.15;

#[derive(Debug, Clone)]
struct AssocTerm {
    discrete_col: usize,
    gamma: f64,
    code_mean: f64,
    code_sd: f64,
}

#[derive(Debug, Clone)]
struct LevelTransition {
    /// Probability of keeping level `l` once drawn.
    keep: Vec<f64>,
    /// Cumulative distribution of the move destination.
    move_cum: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LevelDrift {
    strata_cols: Vec<usize>,
    by_stratum: BTreeMap<Vec<usize>, LevelTransition>,
}

pub struct SmoothedBootstrapGenerator {
    schema: Schema,
    train: Table,
    bandwidth_rule: f64,
    bandwidth: Vec<f64>,
    mean_drift: Vec<f64>,
    assoc_drift: Vec<Vec<AssocTerm>>,
    level_drift: Vec<Option<LevelDrift>>,
    warnings: Vec<String>,
}

impl SmoothedBootstrapGenerator {
    pub fn fit(
        train: &Table,
        bandwidth_rule: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<SmoothedBootstrapGenerator> {
        if train.n_rows() == 0 {
            return Err(Error::EmptyTable);
        }
        if !(bandwidth_rule >= 0.0) {
            return Err(Error::InvalidConfig(
                "bandwidth rule must be non-negative".into(),
            ));
        }
        let schema = train.schema().clone();
        let n = train.n_rows();
        let n_f = n as f64;
        let rate = n_f.powf(-0.2);

        let mut bandwidth = vec![0.0; schema.len()];
        let mut mean_drift = vec![0.0; schema.len()];
        let mut assoc_drift: Vec<Vec<AssocTerm>> = vec![Vec::new(); schema.len()];
        let mut level_drift: Vec<Option<LevelDrift>> = vec![None; schema.len()];

        // Fit-time draws happen in schema order, one block per column, so the
        // fitted generator is a pure function of (train, rule, seed).
        for col in 0..schema.len() {
            if bandwidth_rule == 0.0 {
                continue;
            }
            if schema.kind(col).is_discrete() {
                level_drift[col] = fit_level_drift(train, col, bandwidth_rule, rate, rng);
            } else {
                let values = train.column(col);
                let mean = values.iter().sum::<f64>() / n_f;
                let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_f).sqrt();
                let h = bandwidth_rule * 1.06 * sd * rate;
                bandwidth[col] = h;
                mean_drift[col] = draw_normal(rng, 0.0, h);
                for d in 0..schema.len() {
                    if !schema.kind(d).is_discrete() {
                        continue;
                    }
                    let codes = train.column(d);
                    let code_mean = codes.iter().sum::<f64>() / n_f;
                    let code_sd =
                        (codes.iter().map(|c| (c - code_mean).powi(2)).sum::<f64>() / n_f).sqrt();
                    let mut gamma = draw_normal(rng, 0.0, ASSOC_DRIFT_FRAC * h);
                    if code_sd == 0.0 {
                        gamma = 0.0;
                    }
                    assoc_drift[col].push(AssocTerm {
                        discrete_col: d,
                        gamma,
                        code_mean,
                        code_sd,
                    });
                }
            }
        }

        Ok(SmoothedBootstrapGenerator {
            schema,
            train: train.clone(),
            bandwidth_rule,
            bandwidth,
            mean_drift,
            assoc_drift,
            level_drift,
            warnings: Vec::new(),
        })
    }

    pub fn bandwidth(&self, col: usize) -> f64 {
        self.bandwidth[col]
    }

    #[cfg(test)]
    pub(crate) fn mean_drift(&self, col: usize) -> f64 {
        self.mean_drift[col]
    }

    #[cfg(test)]
    pub(crate) fn assoc_gammas(&self, col: usize) -> Vec<f64> {
        self.assoc_drift[col].iter().map(|t| t.gamma).collect()
    }

    fn sample_row(&self, row: &mut [f64], rng: &mut ChaCha8Rng) {
        let n = self.train.n_rows();
        let pick = uniform_below(rng, n as u64) as usize;
        for col in 0..self.schema.len() {
            row[col] = self.train.value(pick, col);
        }
        for col in 0..self.schema.len() {
            if let Some(drift) = &self.level_drift[col] {
                // The stratum key uses the already-drifted predecessors, so the
                // chain stays sequentially consistent.
                let key: Vec<usize> = drift.strata_cols.iter().map(|&c| row[c] as usize).collect();
                if let Some(transition) = drift.by_stratum.get(&key) {
                    let level = row[col] as usize;
                    if uniform53(rng) >= transition.keep[level] {
                        let u = uniform53(rng);
                        let dest = transition
                            .move_cum
                            .iter()
                            .position(|&c| u < c)
                            .unwrap_or(transition.move_cum.len() - 1);
                        row[col] = dest as f64;
                    }
                }
            }
        }
        for col in 0..self.schema.len() {
            if self.schema.kind(col).is_discrete() {
                continue;
            }
            let mut value = row[col] + self.mean_drift[col];
            for term in &self.assoc_drift[col] {
                if term.code_sd > 0.0 {
                    value +=
                        term.gamma * (row[term.discrete_col] - term.code_mean) / term.code_sd;
                }
            }
            if self.bandwidth[col] > 0.0 {
                value = draw_normal(rng, value, self.bandwidth[col]);
            }
            row[col] = value;
        }
    }
}

impl Generator for SmoothedBootstrapGenerator {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn train_n(&self) -> usize {
        self.train.n_rows()
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        let width = self.schema.len();
        let mut columns = vec![Vec::with_capacity(m); width];
        let mut row = vec![0.0; width];
        for _ in 0..m {
            self.sample_row(&mut row, rng);
            for (col, column) in columns.iter_mut().enumerate() {
                column.push(row[col]);
            }
        }
        Ok(Table::new(self.schema.clone(), columns).expect("bootstrap samples are schema-valid"))
    }

    fn label(&self) -> String {
        format!("smoothed_bootstrap:{}", self.bandwidth_rule)
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Builds the perturbed level transition for one discrete column, or `None`
/// when every stratum ends up undrifted.
fn fit_level_drift(
    train: &Table,
    col: usize,
    bandwidth_rule: f64,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Option<LevelDrift> {
    let schema = train.schema();
    let n_levels = schema.kind(col).level_count().unwrap();
    let strata_cols: Vec<usize> = (0..col).filter(|&c| schema.kind(c).is_discrete()).collect();
    let tau = LEVEL_DRIFT_FRAC * bandwidth_rule * 1.06 * rate;

    let mut counts: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for row in 0..train.n_rows() {
        let key = train.level_tuple(row, &strata_cols);
        counts.entry(key).or_insert_with(|| vec![0.0; n_levels])[train.value(row, col) as usize] +=
            1.0;
    }

    let mut by_stratum = BTreeMap::new();
    for (key, level_counts) in counts {
        let total: f64 = level_counts.iter().sum();
        let p: Vec<f64> = level_counts.iter().map(|c| c / total).collect();
        // Mean-zero perturbation with per-level scale sqrt(p_l); levels with
        // p_l = 0 stay at zero, so the support never grows.
        let raw: Vec<f64> = p.iter().map(|&pl| draw_normal(rng, 0.0, pl.sqrt())).collect();
        let raw_sum: f64 = raw.iter().sum();
        let mut target: Vec<f64> = p
            .iter()
            .zip(&raw)
            .map(|(&pl, &dl)| (pl + tau * (dl - pl * raw_sum)).max(0.0))
            .collect();
        let target_sum: f64 = target.iter().sum();
        if target_sum <= 0.0 {
            continue;
        }
        for t in target.iter_mut() {
            *t /= target_sum;
        }

        let excess: Vec<f64> = target
            .iter()
            .zip(&p)
            .map(|(t, pl)| (t - pl).max(0.0))
            .collect();
        let total_excess: f64 = excess.iter().sum();
        if total_excess < 1e-15 {
            continue;
        }
        let keep: Vec<f64> = p
            .iter()
            .zip(&target)
            .map(|(&pl, &t)| if pl > 0.0 { (t / pl).min(1.0) } else { 1.0 })
            .collect();
        let mut move_cum = Vec::with_capacity(n_levels);
        let mut acc = 0.0;
        for e in &excess {
            acc += e / total_excess;
            move_cum.push(acc);
        }
        if let Some(last) = move_cum.last_mut() {
            *last = 1.0;
        }
        by_stratum.insert(key, LevelTransition { keep, move_cum });
    }

    if by_stratum.is_empty() {
        None
    } else {
        Some(LevelDrift {
            strata_cols,
            by_stratum,
        })
    }
}
