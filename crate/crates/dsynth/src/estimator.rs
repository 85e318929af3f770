//! Estimators for the three supported estimands, their influence curves, and
//! stratum-mean nuisance estimation with optional k-fold cross-fitting.
//!
//! The partialling-out coefficient is
//!
//! ```text
//! theta = sum_i (A_i - E(A|X_i)) (Y_i - E(Y|X_i)) / sum_i (A_i - E(A|X_i))^2
//! ```
//!
//! with per-observation influence values
//!
//! ```text
//! phi_i = (A_i - E(A|X_i)) * [Y_i - E(Y|X_i) - theta (A_i - E(A|X_i))] / D,
//! D = mean_i (A_i - E(A|X_i))^2.
//! ```
//!
//! Because `theta` is the ratio of the same sums the influence values average
//! to zero exactly (up to rounding), which the plug-in bias term below relies
//! on. With k=1 stratum-mean nuisances the estimator coincides with the OLS
//! coefficient of the exposure in a dummy regression on the strata.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{shuffle, ChaCha8Rng};
use crate::table::{ColumnKind, Schema, Table};

/// Which plug-in analysis to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Estimand {
    /// Population mean of a continuous or binary column.
    Mean { column: String },
    /// Partialling-out coefficient of `exposure` on `outcome` adjusted for
    /// discrete covariates.
    LinCoef {
        outcome: String,
        exposure: String,
        covariates: Vec<String>,
    },
    /// Difference in outcome means between the two levels of a binary arm.
    RiskDifference { outcome: String, arm: String },
}

impl Estimand {
    /// Parses the compact config syntax: `mean:age`,
    /// `lincoef:bp~therapy|stage+site`, `rd:death~aspirin`.
    pub fn parse(text: &str) -> Result<Estimand> {
        let bad = |msg: &str| Error::InvalidConfig(format!("estimand `{text}`: {msg}"));
        let (head, rest) = text
            .split_once(':')
            .ok_or_else(|| bad("expected `kind:spec`"))?;
        match head.trim() {
            "mean" => {
                let column = rest.trim();
                if column.is_empty() {
                    return Err(bad("missing column"));
                }
                Ok(Estimand::Mean {
                    column: column.to_string(),
                })
            }
            "lincoef" => {
                let (outcome, tail) = rest
                    .split_once('~')
                    .ok_or_else(|| bad("expected `outcome~exposure|covariates`"))?;
                let (exposure, covs) = tail
                    .split_once('|')
                    .ok_or_else(|| bad("expected `|covariate` after the exposure"))?;
                let covariates: Vec<String> = covs
                    .split('+')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if outcome.trim().is_empty() || exposure.trim().is_empty() || covariates.is_empty()
                {
                    return Err(bad("outcome, exposure and covariates are all required"));
                }
                Ok(Estimand::LinCoef {
                    outcome: outcome.trim().to_string(),
                    exposure: exposure.trim().to_string(),
                    covariates,
                })
            }
            "rd" => {
                let (outcome, arm) = rest
                    .split_once('~')
                    .ok_or_else(|| bad("expected `outcome~arm`"))?;
                if outcome.trim().is_empty() || arm.trim().is_empty() {
                    return Err(bad("outcome and arm are required"));
                }
                Ok(Estimand::RiskDifference {
                    outcome: outcome.trim().to_string(),
                    arm: arm.trim().to_string(),
                })
            }
            other => Err(bad(&format!("unknown estimand kind `{other}`"))),
        }
    }

    /// Canonical rendering, inverse of [`Estimand::parse`].
    pub fn id(&self) -> String {
        match self {
            Estimand::Mean { column } => format!("mean:{column}"),
            Estimand::LinCoef {
                outcome,
                exposure,
                covariates,
            } => format!("lincoef:{outcome}~{exposure}|{}", covariates.join("+")),
            Estimand::RiskDifference { outcome, arm } => format!("rd:{outcome}~{arm}"),
        }
    }

    /// The column a debiasing shift for this estimand would move.
    pub fn shifted_column(&self) -> &str {
        match self {
            Estimand::Mean { column } => column,
            Estimand::LinCoef { outcome, .. } => outcome,
            Estimand::RiskDifference { outcome, .. } => outcome,
        }
    }

    /// Checks column existence and kinds against a schema. The outcome of a
    /// risk difference may be continuous to admit shift-debiased data whose
    /// binary outcome was relaxed.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let numeric = |name: &str| -> Result<()> {
            let kind = schema.kind_of(name)?;
            if kind.is_numeric() {
                Ok(())
            } else {
                Err(Error::KindMismatch {
                    column: name.to_string(),
                    expected: "continuous or binary",
                    actual: kind.to_string(),
                })
            }
        };
        match self {
            Estimand::Mean { column } => numeric(column),
            Estimand::LinCoef {
                outcome,
                exposure,
                covariates,
            } => {
                numeric(outcome)?;
                numeric(exposure)?;
                for cov in covariates {
                    let kind = schema.kind_of(cov)?;
                    if !kind.is_discrete() {
                        return Err(Error::KindMismatch {
                            column: cov.clone(),
                            expected: "discrete",
                            actual: kind.to_string(),
                        });
                    }
                }
                Ok(())
            }
            Estimand::RiskDifference { outcome, arm } => {
                numeric(outcome)?;
                let kind = schema.kind_of(arm)?;
                if *kind != ColumnKind::Binary {
                    return Err(Error::KindMismatch {
                        column: arm.clone(),
                        expected: "binary",
                        actual: kind.to_string(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// How the point estimate was produced. The values coincide when no
/// cross-fitting is used; they are reported separately because their standard
/// errors differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mle,
    Eic,
}

/// Estimand-specific pieces needed by the classical standard errors.
#[derive(Debug, Clone)]
pub enum FitDetail {
    Mean {
        /// Sample variance with the m-1 denominator.
        sample_var: f64,
    },
    LinCoef {
        /// `sum_i (A_i - E(A|X_i))^2`.
        denominator: f64,
        /// Residual sum of squares of `Y - E(Y|X) - theta (A - E(A|X))`.
        rss: f64,
        /// Parameter count of the equivalent dummy regression.
        n_params: usize,
        /// Rows dropped because their stratum was unestimable.
        dropped: usize,
        strata: usize,
    },
    RiskDifference {
        /// Per-arm share of observations, arms 0 and 1.
        share: [f64; 2],
        /// Per-arm outcome means.
        mean: [f64; 2],
        /// Per-arm population variances (denominator m_g); equals
        /// `p(1-p)` exactly for 0/1 outcomes.
        var: [f64; 2],
        count: [usize; 2],
    },
}

/// A fitted estimator: the point estimate plus per-row influence values.
#[derive(Debug, Clone)]
pub struct EstimatorFit {
    pub theta: f64,
    pub eic: Vec<f64>,
    pub n_used: usize,
    pub method: Method,
    pub detail: FitDetail,
}

impl EstimatorFit {
    /// Mean of the squared influence values (plug-in, m denominator).
    pub fn mean_eic_sq(&self) -> f64 {
        self.eic.iter().map(|phi| phi * phi).sum::<f64>() / self.n_used as f64
    }
}

/// The plug-in synthetic-data bias term: minus the average influence value on
/// the analysis sample. Zero by construction for these estimators; exposed as
/// a diagnostic.
pub fn bias_term_synthetic_plugin(fit: &EstimatorFit) -> f64 {
    -fit.eic.iter().sum::<f64>() / fit.n_used as f64
}

/// Sample mean with influence values `x_i - theta`.
pub fn estimate_mean(table: &Table, column: &str) -> Result<EstimatorFit> {
    let theta = table.column_mean(column)?;
    let values = table.column_by_name(column)?;
    let eic: Vec<f64> = values.iter().map(|x| x - theta).collect();
    let m = values.len();
    let sample_var = if m > 1 {
        eic.iter().map(|e| e * e).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    Ok(EstimatorFit {
        theta,
        eic,
        n_used: m,
        method: Method::Mle,
        detail: FitDetail::Mean { sample_var },
    })
}

/// Per-stratum conditional means of the exposure and outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumStats {
    pub mean_a: f64,
    pub mean_y: f64,
    pub count: usize,
}

/// Stratum-mean nuisance model, optionally cross-fitted over `folds` folds.
///
/// With `folds > 1` predictions for a row come only from strata estimated on
/// the other folds; rows whose stratum is absent there are unestimable and the
/// estimators drop and count them.
#[derive(Debug, Clone)]
pub struct NuisanceModel {
    covariate_cols: Vec<usize>,
    pub folds: usize,
    pub fold_of_row: Vec<usize>,
    pooled: BTreeMap<Vec<usize>, StratumStats>,
    leave_fold_out: Option<Vec<BTreeMap<Vec<usize>, StratumStats>>>,
}

impl NuisanceModel {
    pub fn covariate_cols(&self) -> &[usize] {
        &self.covariate_cols
    }

    pub fn pooled_strata(&self) -> &BTreeMap<Vec<usize>, StratumStats> {
        &self.pooled
    }

    /// Out-of-fold (or pooled, if `folds == 1`) predictions for a row.
    pub fn predict(&self, table: &Table, row: usize) -> Option<(f64, f64)> {
        let key = table.level_tuple(row, &self.covariate_cols);
        let stats = match &self.leave_fold_out {
            None => self.pooled.get(&key),
            Some(maps) => maps[self.fold_of_row[row]].get(&key),
        };
        stats.map(|s| (s.mean_a, s.mean_y))
    }
}

fn stratum_means(
    table: &Table,
    rows: impl Iterator<Item = usize>,
    covariate_cols: &[usize],
    a_col: usize,
    y_col: usize,
) -> BTreeMap<Vec<usize>, StratumStats> {
    let mut sums: BTreeMap<Vec<usize>, (f64, f64, usize)> = BTreeMap::new();
    for row in rows {
        let key = table.level_tuple(row, covariate_cols);
        let entry = sums.entry(key).or_insert((0.0, 0.0, 0));
        entry.0 += table.value(row, a_col);
        entry.1 += table.value(row, y_col);
        entry.2 += 1;
    }
    sums.into_iter()
        .map(|(key, (sa, sy, count))| {
            (
                key,
                StratumStats {
                    mean_a: sa / count as f64,
                    mean_y: sy / count as f64,
                    count,
                },
            )
        })
        .collect()
}

/// Fits stratum-mean nuisances for `E(A|X)` and `E(Y|X)`.
///
/// Fold assignment is a seeded uniform permutation split; the stream is only
/// consumed when `folds > 1`.
pub fn fit_nuisance(
    table: &Table,
    outcome: &str,
    exposure: &str,
    covariates: &[String],
    folds: usize,
    rng: &mut ChaCha8Rng,
) -> Result<NuisanceModel> {
    let schema = table.schema();
    let y_col = schema.index(outcome)?;
    let a_col = schema.index(exposure)?;
    let mut covariate_cols = Vec::with_capacity(covariates.len());
    for cov in covariates {
        let idx = schema.index(cov)?;
        if !schema.kind(idx).is_discrete() {
            return Err(Error::KindMismatch {
                column: cov.clone(),
                expected: "discrete",
                actual: schema.kind(idx).to_string(),
            });
        }
        covariate_cols.push(idx);
    }
    let n = table.n_rows();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    if folds == 0 || n < folds {
        return Err(Error::InvalidConfig(format!(
            "nuisance folds {folds} invalid for {n} rows"
        )));
    }

    let mut fold_of_row = vec![0usize; n];
    let leave_fold_out = if folds > 1 {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(rng, &mut order);
        for (position, &row) in order.iter().enumerate() {
            fold_of_row[row] = position % folds;
        }
        let maps = (0..folds)
            .map(|fold| {
                stratum_means(
                    table,
                    (0..n).filter(|&r| fold_of_row[r] != fold),
                    &covariate_cols,
                    a_col,
                    y_col,
                )
            })
            .collect();
        Some(maps)
    } else {
        None
    };

    let pooled = stratum_means(table, 0..n, &covariate_cols, a_col, y_col);

    Ok(NuisanceModel {
        covariate_cols,
        folds,
        fold_of_row,
        pooled,
        leave_fold_out,
    })
}

/// Partialling-out estimate of the exposure coefficient.
pub fn estimate_lincoef(
    table: &Table,
    nuisance: &NuisanceModel,
    estimand: &Estimand,
) -> Result<EstimatorFit> {
    let (outcome, exposure) = match estimand {
        Estimand::LinCoef {
            outcome, exposure, ..
        } => (outcome, exposure),
        _ => {
            return Err(Error::InvalidConfig(
                "estimate_lincoef requires a lincoef estimand".into(),
            ))
        }
    };
    let schema = table.schema();
    let y_col = schema.index(outcome)?;
    let a_col = schema.index(exposure)?;
    if table.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }

    let mut resid_a = Vec::with_capacity(table.n_rows());
    let mut resid_y = Vec::with_capacity(table.n_rows());
    let mut dropped = 0usize;
    for row in 0..table.n_rows() {
        match nuisance.predict(table, row) {
            Some((a_hat, y_hat)) => {
                resid_a.push(table.value(row, a_col) - a_hat);
                resid_y.push(table.value(row, y_col) - y_hat);
            }
            None => dropped += 1,
        }
    }
    let m = resid_a.len();
    if m == 0 {
        return Err(Error::StratumUnestimable {
            stratum: "all rows".into(),
        });
    }

    let denominator: f64 = resid_a.iter().map(|a| a * a).sum();
    if denominator < 1e-12 {
        return Err(Error::DegenerateExposure { denominator });
    }
    let numerator: f64 = resid_a.iter().zip(&resid_y).map(|(a, y)| a * y).sum();
    let theta = numerator / denominator;

    let mean_denom = denominator / m as f64;
    let mut rss = 0.0;
    let eic: Vec<f64> = resid_a
        .iter()
        .zip(&resid_y)
        .map(|(a, y)| {
            let resid = y - theta * a;
            rss += resid * resid;
            a * resid / mean_denom
        })
        .collect();

    let strata = nuisance.pooled_strata().len();
    Ok(EstimatorFit {
        theta,
        eic,
        n_used: m,
        method: if nuisance.folds > 1 { Method::Eic } else { Method::Mle },
        detail: FitDetail::LinCoef {
            denominator,
            rss,
            n_params: strata + 1,
            dropped,
            strata,
        },
    })
}

/// Difference in outcome means between arm 1 and arm 0 of a binary arm column.
///
/// The outcome is normally binary; continuous values are accepted so that
/// shift-debiased outcomes (which leave the {0,1} grid) can be analyzed the
/// same way.
pub fn estimate_risk_difference(table: &Table, outcome: &str, arm: &str) -> Result<EstimatorFit> {
    let schema = table.schema();
    let y_col = schema.index(outcome)?;
    let arm_col = schema.index(arm)?;
    if *schema.kind(arm_col) != ColumnKind::Binary {
        return Err(Error::KindMismatch {
            column: arm.to_string(),
            expected: "binary",
            actual: schema.kind(arm_col).to_string(),
        });
    }
    if table.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }

    let arms = table.column(arm_col);
    let ys = table.column(y_col);
    let m = table.n_rows();
    let mut count = [0usize; 2];
    let mut sum = [0.0f64; 2];
    for (a, y) in arms.iter().zip(ys) {
        let g = *a as usize;
        count[g] += 1;
        sum[g] += y;
    }
    for g in 0..2 {
        if count[g] == 0 {
            return Err(Error::EmptyArm {
                column: arm.to_string(),
                arm: g as u8,
            });
        }
    }
    let mean = [sum[0] / count[0] as f64, sum[1] / count[1] as f64];
    let share = [count[0] as f64 / m as f64, count[1] as f64 / m as f64];
    let theta = mean[1] - mean[0];

    let mut var = [0.0f64; 2];
    let eic: Vec<f64> = arms
        .iter()
        .zip(ys)
        .map(|(a, y)| {
            let g = *a as usize;
            let centered = y - mean[g];
            var[g] += centered * centered;
            if g == 1 {
                centered / share[1]
            } else {
                -centered / share[0]
            }
        })
        .collect();
    var[0] /= count[0] as f64;
    var[1] /= count[1] as f64;

    Ok(EstimatorFit {
        theta,
        eic,
        n_used: m,
        method: Method::Mle,
        detail: FitDetail::RiskDifference {
            share,
            mean,
            var,
            count,
        },
    })
}

/// Runs the estimator selected by `estimand`, fitting nuisances on the same
/// table (the plug-in convention used throughout).
pub fn estimate(
    table: &Table,
    estimand: &Estimand,
    nuisance_folds: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EstimatorFit> {
    match estimand {
        Estimand::Mean { column } => estimate_mean(table, column),
        Estimand::LinCoef {
            outcome,
            exposure,
            covariates,
        } => {
            let nuisance =
                fit_nuisance(table, outcome, exposure, covariates, nuisance_folds, rng)?;
            estimate_lincoef(table, &nuisance, estimand)
        }
        Estimand::RiskDifference { outcome, arm } => {
            estimate_risk_difference(table, outcome, arm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::table::{ColumnKind, Schema};

    fn lincoef_estimand() -> Estimand {
        Estimand::LinCoef {
            outcome: "y".into(),
            exposure: "a".into(),
            covariates: vec!["x".into()],
        }
    }

    fn one_stratum_table(a: &[f64], y: &[f64]) -> Table {
        let schema = Schema::new(vec![
            ("y".into(), ColumnKind::Continuous),
            ("a".into(), ColumnKind::Binary),
            ("x".into(), ColumnKind::Categorical(vec!["only".into()])),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![y.to_vec(), a.to_vec(), vec![0.0; a.len()]],
        )
        .unwrap()
    }

    #[test]
    fn estimand_parsing_round_trips() {
        for text in ["mean:age", "lincoef:bp~therapy|stage", "rd:death~aspirin"] {
            assert_eq!(Estimand::parse(text).unwrap().id(), text);
        }
        let multi = Estimand::parse("lincoef:y~a|x1+x2").unwrap();
        assert_eq!(multi.id(), "lincoef:y~a|x1+x2");
        assert!(Estimand::parse("mean:").is_err());
        assert!(Estimand::parse("lincoef:y~a").is_err());
        assert!(Estimand::parse("median:x").is_err());
    }

    #[test]
    fn mean_fit_examples() {
        let schema = Schema::new(vec![("x".into(), ColumnKind::Continuous)]).unwrap();
        let t = Table::new(schema.clone(), vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let fit = estimate_mean(&t, "x").unwrap();
        assert_eq!(fit.theta, 2.0);
        assert_eq!(fit.eic, vec![-1.0, 0.0, 1.0]);

        let c = Table::new(schema.clone(), vec![vec![7.5; 5]]).unwrap();
        let fit = estimate_mean(&c, "x").unwrap();
        assert_eq!(fit.theta, 7.5);
        assert!(fit.eic.iter().all(|&e| e == 0.0));

        assert!(matches!(
            estimate_mean(&Table::empty(schema), "x"),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn lincoef_trivial_cases() {
        let t = one_stratum_table(&[0.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0]);
        let nuis = fit_nuisance(&t, "y", "a", &["x".into()], 1, &mut stream(1)).unwrap();
        let fit = estimate_lincoef(&t, &nuis, &lincoef_estimand()).unwrap();
        assert!((fit.theta - 1.0).abs() < 1e-12);

        let t = one_stratum_table(&[0.0, 1.0], &[3.0, 8.0]);
        let nuis = fit_nuisance(&t, "y", "a", &["x".into()], 1, &mut stream(1)).unwrap();
        let fit = estimate_lincoef(&t, &nuis, &lincoef_estimand()).unwrap();
        assert!((fit.theta - 5.0).abs() < 1e-12);
    }

    #[test]
    fn lincoef_degenerate_exposure() {
        let t = one_stratum_table(&[1.0, 1.0, 1.0], &[0.5, 0.2, 0.9]);
        let nuis = fit_nuisance(&t, "y", "a", &["x".into()], 1, &mut stream(1)).unwrap();
        assert!(matches!(
            estimate_lincoef(&t, &nuis, &lincoef_estimand()),
            Err(Error::DegenerateExposure { .. })
        ));
    }

    #[test]
    fn single_level_nuisance_equals_marginal_means() {
        let t = one_stratum_table(&[0.0, 1.0, 1.0, 0.0], &[1.0, 2.0, 4.0, 3.0]);
        let nuis = fit_nuisance(&t, "y", "a", &["x".into()], 1, &mut stream(1)).unwrap();
        let stats = nuis.pooled_strata().values().next().unwrap();
        assert_eq!(stats.mean_a, 0.5);
        assert_eq!(stats.mean_y, 2.5);
    }

    #[test]
    fn cross_fit_predictions_come_from_opposite_fold() {
        // Four rows, two strata, two folds: hand-enumerable.
        let schema = Schema::new(vec![
            ("y".into(), ColumnKind::Continuous),
            ("a".into(), ColumnKind::Binary),
            (
                "x".into(),
                ColumnKind::Categorical(vec!["u".into(), "v".into()]),
            ),
        ])
        .unwrap();
        let t = Table::new(
            schema,
            vec![
                vec![10.0, 20.0, 30.0, 40.0],
                vec![0.0, 1.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0, 1.0],
            ],
        )
        .unwrap();
        let nuis = fit_nuisance(&t, "y", "a", &["x".into()], 2, &mut stream(5)).unwrap();
        for row in 0..4 {
            let fold = nuis.fold_of_row[row];
            let key = t.level_tuple(row, nuis.covariate_cols());
            // Recompute the opposite-fold stratum mean by hand.
            let mates: Vec<usize> = (0..4)
                .filter(|&r| nuis.fold_of_row[r] != fold && t.level_tuple(r, nuis.covariate_cols()) == key)
                .collect();
            match nuis.predict(&t, row) {
                Some((a_hat, y_hat)) => {
                    let ys: f64 = mates.iter().map(|&r| t.value(r, 0)).sum();
                    let as_: f64 = mates.iter().map(|&r| t.value(r, 1)).sum();
                    assert!(!mates.is_empty());
                    assert!((y_hat - ys / mates.len() as f64).abs() < 1e-12);
                    assert!((a_hat - as_ / mates.len() as f64).abs() < 1e-12);
                }
                None => assert!(mates.is_empty()),
            }
        }
    }

    #[test]
    fn risk_difference_examples() {
        let schema = Schema::new(vec![
            ("death".into(), ColumnKind::Binary),
            ("arm".into(), ColumnKind::Binary),
        ])
        .unwrap();
        // Balanced arms with equal proportions: theta = 0.
        let t = Table::new(
            schema.clone(),
            vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]],
        )
        .unwrap();
        let fit = estimate_risk_difference(&t, "death", "arm").unwrap();
        assert_eq!(fit.theta, 0.0);

        // Y = arm: theta = 1.
        let t = Table::new(
            schema.clone(),
            vec![vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0, 1.0]],
        )
        .unwrap();
        let fit = estimate_risk_difference(&t, "death", "arm").unwrap();
        assert_eq!(fit.theta, 1.0);

        // Empty arm errors.
        let t = Table::new(schema, vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            estimate_risk_difference(&t, "death", "arm"),
            Err(Error::EmptyArm { .. })
        ));
    }

    #[test]
    fn influence_values_average_to_zero() {
        let params = crate::dgp::DgpParams::default();
        let t = crate::dgp::sample_dgp(400, &params, &mut stream(3));

        let fit = estimate_mean(&t, "age").unwrap();
        assert!(bias_term_synthetic_plugin(&fit).abs() < 1e-12 * 50.0);

        let est = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        let nuis = fit_nuisance(&t, "bp", "therapy", &["stage".into()], 1, &mut stream(4)).unwrap();
        let fit = estimate_lincoef(&t, &nuis, &est).unwrap();
        assert!(bias_term_synthetic_plugin(&fit).abs() < 1e-10);

        // Cross-fitted: the same algebra applies; report stays tiny.
        let nuis = fit_nuisance(&t, "bp", "therapy", &["stage".into()], 5, &mut stream(4)).unwrap();
        let fit = estimate_lincoef(&t, &nuis, &est).unwrap();
        assert!(bias_term_synthetic_plugin(&fit).abs() < 1e-10);

        let fit = estimate_risk_difference(&t, "bp", "therapy").unwrap();
        assert!(bias_term_synthetic_plugin(&fit).abs() < 1e-10 * 100.0);
    }

    #[test]
    fn lincoef_matches_normal_equations_oracle() {
        // Oracle: solve the dummy regression y ~ a + stratum indicators by
        // Gaussian elimination on the normal equations.
        let params = crate::dgp::DgpParams::default();
        let est = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        for seed in 0..20 {
            let t = crate::dgp::sample_dgp(50, &params, &mut stream(100 + seed));
            let nuis =
                fit_nuisance(&t, "bp", "therapy", &["stage".into()], 1, &mut stream(1)).unwrap();
            let fit = match estimate_lincoef(&t, &nuis, &est) {
                Ok(fit) => fit,
                // Tiny samples can lack exposure variation; the oracle would be
                // singular there too.
                Err(Error::DegenerateExposure { .. }) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            };
            let oracle = ols_dummy_coefficient(&t);
            assert!(
                (fit.theta - oracle).abs() < 1e-10,
                "seed {seed}: {} vs {}",
                fit.theta,
                oracle
            );
        }
    }

    #[test]
    fn lincoef_invariant_under_outcome_shift() {
        let params = crate::dgp::DgpParams::default();
        let t = crate::dgp::sample_dgp(200, &params, &mut stream(9));
        let est = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        let nuis = fit_nuisance(&t, "bp", "therapy", &["stage".into()], 1, &mut stream(1)).unwrap();
        let base = estimate_lincoef(&t, &nuis, &est).unwrap();

        let bp_idx = t.schema().index("bp").unwrap();
        let shifted_col: Vec<f64> = t.column(bp_idx).iter().map(|y| y + 1000.0).collect();
        let shifted = t.with_column_replaced(bp_idx, shifted_col, false);
        let nuis2 =
            fit_nuisance(&shifted, "bp", "therapy", &["stage".into()], 1, &mut stream(1)).unwrap();
        let fit2 = estimate_lincoef(&shifted, &nuis2, &est).unwrap();
        assert!((base.theta - fit2.theta).abs() < 1e-10);

        let rd = estimate_risk_difference(&t, "bp", "therapy").unwrap();
        let rd2 = estimate_risk_difference(&shifted, "bp", "therapy").unwrap();
        assert!((rd.theta - rd2.theta).abs() < 1e-9);
    }

    /// Test-only oracle: the coefficient of `therapy` in an OLS of `bp` on
    /// `therapy` plus a full set of stage indicators (no intercept), solved
    /// through the normal equations.
    fn ols_dummy_coefficient(t: &Table) -> f64 {
        let stage = t.column_by_name("stage").unwrap();
        let a = t.column_by_name("therapy").unwrap();
        let y = t.column_by_name("bp").unwrap();
        let levels: Vec<usize> = {
            let mut ls: Vec<usize> = stage.iter().map(|&s| s as usize).collect();
            ls.sort_unstable();
            ls.dedup();
            ls
        };
        let p = levels.len() + 1;
        let design_row = |i: usize| -> Vec<f64> {
            let mut row = vec![0.0; p];
            row[0] = a[i];
            let pos = levels.iter().position(|&l| l == stage[i] as usize).unwrap();
            row[1 + pos] = 1.0;
            row
        };
        let n = t.n_rows();
        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        for i in 0..n {
            let row = design_row(i);
            for r in 0..p {
                xty[r] += row[r] * y[i];
                for c in 0..p {
                    xtx[r][c] += row[r] * row[c];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..p {
            let pivot = (col..p)
                .max_by(|&i, &j| xtx[i][col].abs().partial_cmp(&xtx[j][col].abs()).unwrap())
                .unwrap();
            xtx.swap(col, pivot);
            xty.swap(col, pivot);
            let d = xtx[col][col];
            assert!(d.abs() > 1e-12, "oracle: singular design");
            for r in 0..p {
                if r != col {
                    let f = xtx[r][col] / d;
                    for c in 0..p {
                        xtx[r][c] -= f * xtx[col][c];
                    }
                    xty[r] -= f * xty[col];
                }
            }
        }
        xty[0] / xtx[0][0]
    }
}
