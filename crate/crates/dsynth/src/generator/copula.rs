//! Gaussian copula over empirical marginals.
//!
//! Fitting computes per-column normal scores `Phi^{-1}(rank / (n+1))` (average
//! ranks for ties) and their correlation matrix. Sampling draws a correlated
//! Gaussian vector through the Cholesky factor, maps each coordinate to a
//! uniform with the normal CDF, and feeds it through the column's empirical
//! quantile function: interpolated order statistics for continuous columns,
//! cumulative level frequencies for discrete ones.
//!
//! The copula reproduces marginals faithfully but squeezes every dependency
//! into one correlation number per pair, so it is the resident example of a
//! misspecified generator.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{normal_quantile, uniform_open, ChaCha8Rng};
use crate::table::{Schema, Table};

use super::Generator;

#[derive(Debug, Clone)]
enum Marginal {
    /// Sorted training values; sampled by linear interpolation between order
    /// statistics.
    Continuous(Vec<f64>),
    /// Cumulative level frequencies.
    Discrete(Vec<f64>),
}

pub struct GaussianCopulaGenerator {
    schema: Schema,
    train_n: usize,
    marginals: Vec<Marginal>,
    /// Lower-triangular Cholesky factor of the normal-score correlation.
    chol: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

impl GaussianCopulaGenerator {
    pub fn fit(train: &Table) -> Result<GaussianCopulaGenerator> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        let schema = train.schema().clone();
        let width = schema.len();
        let mut warnings = Vec::new();

        let mut marginals = Vec::with_capacity(width);
        let mut scores: Vec<Vec<f64>> = Vec::with_capacity(width);
        let mut degenerate = vec![false; width];
        for col in 0..width {
            let values = train.column(col);
            if schema.kind(col).is_discrete() {
                let n_levels = schema.kind(col).level_count().unwrap();
                let mut counts = vec![0.0; n_levels];
                for &v in values {
                    counts[v as usize] += 1.0;
                }
                let mut cum = Vec::with_capacity(n_levels);
                let mut acc = 0.0;
                for c in &counts {
                    acc += c / n as f64;
                    cum.push(acc);
                }
                if let Some(last) = cum.last_mut() {
                    *last = 1.0;
                }
                marginals.push(Marginal::Discrete(cum));
            } else {
                let mut sorted = values.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                marginals.push(Marginal::Continuous(sorted));
            }
            scores.push(normal_scores(values));
            let first = values[0];
            if values.iter().all(|&v| v == first) {
                degenerate[col] = true;
                warnings.push(format!(
                    "column `{}` is constant; treated as independent",
                    schema.name(col)
                ));
            }
        }

        let mut corr = vec![vec![0.0; width]; width];
        for r in 0..width {
            corr[r][r] = 1.0;
            for c in 0..r {
                let rho = if degenerate[r] || degenerate[c] {
                    0.0
                } else {
                    correlation(&scores[r], &scores[c])
                };
                corr[r][c] = rho;
                corr[c][r] = rho;
            }
        }

        let chol = cholesky_with_jitter(corr).ok_or_else(|| {
            Error::InvalidConfig("copula correlation matrix is not positive definite".into())
        })?;

        Ok(GaussianCopulaGenerator {
            schema,
            train_n: n,
            marginals,
            chol,
            warnings,
        })
    }

    #[cfg(test)]
    pub(crate) fn correlation(&self, i: usize, j: usize) -> f64 {
        // Recover R = L L^T entries from the stored factor.
        (0..self.chol[i].len())
            .map(|k| self.chol[i][k] * self.chol[j][k])
            .sum()
    }
}

impl Generator for GaussianCopulaGenerator {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn train_n(&self) -> usize {
        self.train_n
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        let width = self.schema.len();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut columns = vec![Vec::with_capacity(m); width];
        let mut eps = vec![0.0; width];
        for _ in 0..m {
            for e in eps.iter_mut() {
                *e = normal_quantile(uniform_open(rng));
            }
            for col in 0..width {
                let w: f64 = (0..=col).map(|k| self.chol[col][k] * eps[k]).sum();
                let u = normal.cdf(w);
                let value = match &self.marginals[col] {
                    Marginal::Continuous(sorted) => empirical_quantile(sorted, u),
                    Marginal::Discrete(cum) => {
                        cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1) as f64
                    }
                };
                columns[col].push(value);
            }
        }
        Ok(Table::new(self.schema.clone(), columns).expect("copula samples are schema-valid"))
    }

    fn label(&self) -> String {
        "gaussian_copula".to_string()
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = u * (n - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
}

/// `Phi^{-1}(rank / (n+1))` with average ranks for ties.
fn normal_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
        .into_iter()
        .map(|r| normal_quantile(r / (n as f64 + 1.0)))
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-0.999, 0.999)
}

/// Cholesky factorization, escalating a diagonal jitter when sample
/// correlations with heavy ties are on the PSD boundary.
fn cholesky_with_jitter(corr: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut a = corr.clone();
        if jitter > 0.0 {
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += jitter;
            }
        }
        if let Some(l) = cholesky(&a) {
            return Some(l);
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    None
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let dim = a.len();
    let mut l = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}
