//! Calibration of the debiasing shifts.
//!
//! A generator fitted on `n` original rows misses the original sample's
//! functionals by its own estimation error. For a chosen analysis that error
//! shows up as the plug-in bias term `-(1/n) sum_i phi(O_i, Phat_n)`, and each
//! supported estimand admits an additive shift of the generator's output that
//! sets this term to zero:
//!
//! * mean of a column: add `delta = mean(original) - theta(Phat_n)`, where
//!   `theta(Phat_n)` is approximated on a large fresh sample of size
//!   `k_large`;
//! * partialling-out coefficient: add `b * (A - E(A|X))` to the outcome,
//!   where the conditional means under the generator come from large
//!   per-stratum conditional samples of size `k_cond` and
//!
//!   ```text
//!   b = sum_i (A_i - E(A|X_i)) (Y_i - E(Y|X_i)) / sum_i (A_i - E(A|X_i))^2
//!       - theta(Phat_n)
//!   ```
//!
//!   over the original rows. The shift raises the generator's own coefficient
//!   by exactly `b`, so recomputing the bias against the shifted generator
//!   returns zero up to Monte Carlo noise; the recomputation ships in the
//!   report as `residual_b`.
//! * two-arm risk difference: debias the outcome mean within each arm and
//!   recombine, shifting each sampled outcome by its arm's delta.
//!
//! Calibration samples come from a dedicated stream owned by the caller; the
//! returned wrapper is immutable and can be sampled concurrently.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::Estimand;
use crate::generator::shift::{
    ArmShiftedGenerator, MeanShiftedGenerator, RegressionShiftedGenerator, StratumMeanMap,
};
use crate::generator::{conditional_sample_rejection, fit_generator, Generator, GeneratorSpec};
use crate::rng::{derive_seed, shuffle, stream, ChaCha8Rng};
use crate::table::{Condition, Table};

/// Tuning knobs of the calibration step.
#[derive(Debug, Clone)]
pub struct DebiasOptions {
    /// Size of the unconditional sample behind `theta(Phat_n)`.
    pub k_large: usize,
    /// Size of each per-stratum conditional sample.
    pub k_cond: usize,
    /// Strict: error on covariate levels outside the calibration map.
    /// Lenient: substitute the marginal exposure mean and count.
    pub strict: bool,
    /// Rejection sampling batch size, in multiples of the target count.
    pub batch_factor: usize,
    /// Rejection sampling draw budget, in multiples of the target count.
    pub max_draw_factor: usize,
    /// Recompute the shift against the shifted generator on an independent
    /// stream (fills `residual_b`; costs a second calibration pass).
    pub check_residual: bool,
}

impl Default for DebiasOptions {
    fn default() -> Self {
        DebiasOptions {
            k_large: 1_000_000,
            k_cond: 100_000,
            strict: true,
            batch_factor: 10,
            max_draw_factor: 1000,
            check_residual: true,
        }
    }
}

/// What a calibration produced.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    MeanDelta { delta: f64 },
    RegressionB { b: f64, residual_b: Option<f64> },
    ArmDelta { arm: u8, delta: f64 },
}

/// Record of one debiasing calibration.
#[derive(Debug, Clone, Serialize)]
pub struct DebiasReport {
    pub estimand: String,
    /// Plug-in value of the estimand under the (pre-shift) generator.
    pub theta_under_generator: f64,
    pub shift: ShiftKind,
    pub k_large: usize,
    pub k_cond: usize,
    /// Lenient-mode fallback substitutions during calibration.
    pub fallback_events: usize,
    /// Set when the shifted column was binary and is now continuous-valued.
    pub binary_relaxed: bool,
    pub warnings: Vec<String>,
}

/// Plug-in estimand value on a fresh `k_large`-sample from the generator.
///
/// For the coefficient the nuisance means are estimated on the large sample
/// itself (saturated strata), which is the plain plug-in under the generator.
pub fn theta_under_generator(
    gen: &dyn Generator,
    estimand: &Estimand,
    k_large: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let sample = gen.sample(k_large, rng)?;
    match estimand {
        Estimand::Mean { column } => sample.column_mean(column),
        Estimand::LinCoef { .. } => {
            let fit = crate::estimator::estimate(&sample, estimand, 1, rng)?;
            Ok(fit.theta)
        }
        Estimand::RiskDifference { outcome, arm } => {
            let fit = crate::estimator::estimate_risk_difference(&sample, outcome, arm)?;
            Ok(fit.theta)
        }
    }
}

/// Calibrates the mean-targeting shift: `delta = mean(original) - theta(Phat_n)`.
pub fn debias_mean(
    gen: Arc<dyn Generator>,
    original: &Table,
    column: &str,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Arc<MeanShiftedGenerator>, DebiasReport)> {
    let observed_mean = original.column_mean(column)?;
    let col = gen.schema().index(column)?;
    let estimand = Estimand::Mean {
        column: column.to_string(),
    };
    let theta_gen = theta_under_generator(&*gen, &estimand, opts.k_large, rng)?;
    let delta = observed_mean - theta_gen;
    let wrapper = Arc::new(MeanShiftedGenerator::new(gen, col, delta));
    let report = DebiasReport {
        estimand: estimand.id(),
        theta_under_generator: theta_gen,
        shift: ShiftKind::MeanDelta { delta },
        k_large: opts.k_large,
        k_cond: 0,
        fallback_events: 0,
        binary_relaxed: wrapper.relaxed_binary(),
        warnings: Vec::new(),
    };
    Ok((wrapper, report))
}

/// Conditional exposure/outcome means under the generator, one large
/// conditional sample per observed covariate stratum.
struct CalibratedMeans {
    mean_a: StratumMeanMap,
    mean_y: StratumMeanMap,
}

fn calibrate_conditional_means(
    gen: &dyn Generator,
    strata: &[Vec<usize>],
    covariate_cols: &[usize],
    a_col: usize,
    y_col: usize,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
) -> Result<CalibratedMeans> {
    let mut mean_a = BTreeMap::new();
    let mut mean_y = BTreeMap::new();
    for key in strata {
        let terms: Vec<(usize, usize)> = covariate_cols
            .iter()
            .copied()
            .zip(key.iter().copied())
            .collect();
        let condition = Condition::from_levels(gen.schema(), &terms)?;
        let sample = if gen.supports_conditional() {
            gen.conditional_sample(&condition, opts.k_cond, rng)?
        } else {
            conditional_sample_rejection(
                gen,
                &condition,
                opts.k_cond,
                rng,
                opts.batch_factor.saturating_mul(opts.k_cond),
                opts.max_draw_factor.saturating_mul(opts.k_cond),
            )?
            .table
        };
        let k = sample.n_rows() as f64;
        mean_a.insert(key.clone(), sample.column(a_col).iter().sum::<f64>() / k);
        mean_y.insert(key.clone(), sample.column(y_col).iter().sum::<f64>() / k);
    }
    Ok(CalibratedMeans {
        mean_a: StratumMeanMap {
            columns: covariate_cols.to_vec(),
            means: mean_a,
        },
        mean_y: StratumMeanMap {
            columns: covariate_cols.to_vec(),
            means: mean_y,
        },
    })
}

/// The coefficient bias `b` given explicit conditional-mean maps: the
/// partialling-out ratio over `original` minus `theta_gen`. This is the
/// closed-form core of the regression calibration, split out so exact
/// conditional means can be injected in tests and by the sample-splitting
/// mode.
pub fn regression_bias_given_means(
    original: &Table,
    estimand: &Estimand,
    mean_a: &StratumMeanMap,
    mean_y: &StratumMeanMap,
    theta_gen: f64,
) -> Result<f64> {
    let (outcome, exposure) = match estimand {
        Estimand::LinCoef {
            outcome, exposure, ..
        } => (outcome, exposure),
        _ => {
            return Err(Error::InvalidConfig(
                "regression bias requires a lincoef estimand".into(),
            ))
        }
    };
    let schema = original.schema();
    let y_col = schema.index(outcome)?;
    let a_col = schema.index(exposure)?;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for row in 0..original.n_rows() {
        let a_hat = mean_a
            .get(original, row)
            .ok_or_else(|| Error::UnseenStratum {
                stratum: mean_a
                    .describe_key(schema, &original.level_tuple(row, &mean_a.columns)),
            })?;
        let y_hat = mean_y.get(original, row).expect("maps share strata");
        let a_res = original.value(row, a_col) - a_hat;
        numerator += a_res * (original.value(row, y_col) - y_hat);
        denominator += a_res * a_res;
    }
    if denominator < 1e-12 {
        return Err(Error::DegenerateExposure { denominator });
    }
    Ok(numerator / denominator - theta_gen)
}

/// Plug-in coefficient on a large unconditional sample using a fixed
/// conditional-mean map (the ratio the shift moves by exactly `b`).
fn lincoef_plugin_with_means(
    sample: &Table,
    estimand: &Estimand,
    means: &CalibratedMeans,
    strict: bool,
    fallback_mean_a: f64,
    fallback_mean_y: f64,
    fallback_events: &mut usize,
) -> Result<f64> {
    let (outcome, exposure) = match estimand {
        Estimand::LinCoef {
            outcome, exposure, ..
        } => (outcome, exposure),
        _ => unreachable!("callers pass lincoef"),
    };
    let schema = sample.schema();
    let y_col = schema.index(outcome)?;
    let a_col = schema.index(exposure)?;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for row in 0..sample.n_rows() {
        let (a_hat, y_hat) = match (means.mean_a.get(sample, row), means.mean_y.get(sample, row)) {
            (Some(a), Some(y)) => (a, y),
            _ if strict => {
                return Err(Error::UnseenStratum {
                    stratum: means
                        .mean_a
                        .describe_key(schema, &sample.level_tuple(row, &means.mean_a.columns)),
                })
            }
            _ => {
                *fallback_events += 1;
                (fallback_mean_a, fallback_mean_y)
            }
        };
        let a_res = sample.value(row, a_col) - a_hat;
        numerator += a_res * (sample.value(row, y_col) - y_hat);
        denominator += a_res * a_res;
    }
    if denominator < 1e-12 {
        return Err(Error::DegenerateExposure { denominator });
    }
    Ok(numerator / denominator)
}

fn regression_calibration(
    gen: &Arc<dyn Generator>,
    original: &Table,
    estimand: &Estimand,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
    fallback_events: &mut usize,
) -> Result<(CalibratedMeans, f64, f64)> {
    let (outcome, exposure, covariates) = match estimand {
        Estimand::LinCoef {
            outcome,
            exposure,
            covariates,
        } => (outcome, exposure, covariates),
        _ => unreachable!(),
    };
    let schema = gen.schema();
    let y_col = schema.index(outcome)?;
    let a_col = schema.index(exposure)?;
    let mut covariate_cols = Vec::with_capacity(covariates.len());
    for cov in covariates {
        covariate_cols.push(schema.index(cov)?);
    }

    // One conditional sample per distinct observed stratum.
    let strata = original.distinct_level_tuples(&covariate_cols);
    let means =
        calibrate_conditional_means(&**gen, &strata, &covariate_cols, a_col, y_col, opts, rng)?;

    let large = gen.sample(opts.k_large, rng)?;
    let fallback_a = large.column(a_col).iter().sum::<f64>() / large.n_rows() as f64;
    let fallback_y = large.column(y_col).iter().sum::<f64>() / large.n_rows() as f64;
    let theta_gen = lincoef_plugin_with_means(
        &large,
        estimand,
        &means,
        opts.strict,
        fallback_a,
        fallback_y,
        fallback_events,
    )?;
    let b =
        regression_bias_given_means(original, estimand, &means.mean_a, &means.mean_y, theta_gen)?;
    Ok((means, theta_gen, b))
}

/// Calibrates the coefficient-targeting shift.
pub fn debias_regression(
    gen: Arc<dyn Generator>,
    original: &Table,
    estimand: &Estimand,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Arc<RegressionShiftedGenerator>, DebiasReport)> {
    let (outcome, exposure) = match estimand {
        Estimand::LinCoef {
            outcome, exposure, ..
        } => (outcome.clone(), exposure.clone()),
        _ => {
            return Err(Error::InvalidConfig(
                "debias_regression requires a lincoef estimand".into(),
            ))
        }
    };
    let schema = gen.schema().clone();
    let y_col = schema.index(&outcome)?;
    let a_col = schema.index(&exposure)?;

    let mut fallback_events = 0usize;
    let (means, theta_gen, b) =
        regression_calibration(&gen, original, estimand, opts, rng, &mut fallback_events)?;
    let fallback_mean_a =
        means.mean_a.means.values().sum::<f64>() / means.mean_a.means.len() as f64;

    let wrapper = Arc::new(RegressionShiftedGenerator::new(
        gen,
        y_col,
        a_col,
        b,
        means.mean_a.clone(),
        fallback_mean_a,
        opts.strict,
    ));

    // Replay the whole calibration against the shifted generator on the
    // continuation of the stream; the shift construction makes the recomputed
    // bias zero up to Monte Carlo noise.
    let mut residual_b = None;
    if opts.check_residual {
        let shifted: Arc<dyn Generator> = wrapper.clone();
        let mut check_events = 0usize;
        let (_, _, b_after) =
            regression_calibration(&shifted, original, estimand, opts, rng, &mut check_events)?;
        fallback_events += check_events;
        residual_b = Some(b_after);
    }

    let mut warnings = Vec::new();
    if !opts.strict && fallback_events > 0 {
        warnings.push(format!(
            "{fallback_events} rows outside the calibrated strata used the marginal exposure mean"
        ));
    }

    let report = DebiasReport {
        estimand: estimand.id(),
        theta_under_generator: theta_gen,
        shift: ShiftKind::RegressionB { b, residual_b },
        k_large: opts.k_large,
        k_cond: opts.k_cond,
        fallback_events,
        binary_relaxed: *schema.kind(y_col) != crate::table::ColumnKind::Continuous,
        warnings,
    };
    Ok((wrapper, report))
}

/// Calibrates per-arm mean shifts for the two-arm analysis: the outcome mean
/// is debiased within each arm and the arms are recombined. Arm shares are
/// left untouched; only outcomes move.
pub fn debias_mean_per_arm(
    gen: Arc<dyn Generator>,
    original: &Table,
    outcome: &str,
    arm: &str,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Arc<ArmShiftedGenerator>, [DebiasReport; 2])> {
    let schema = gen.schema().clone();
    let y_col = schema.index(outcome)?;
    let arm_col = schema.index(arm)?;

    let parts = original.split_by(arm)?;
    let mut deltas = [0.0; 2];
    let mut thetas = [0.0; 2];
    for g in 0..2usize {
        let part = &parts[&g];
        if part.n_rows() == 0 {
            return Err(Error::EmptyArm {
                column: arm.to_string(),
                arm: g as u8,
            });
        }
        let observed = part.column_mean(outcome)?;
        let condition = Condition::from_levels(&schema, &[(arm_col, g)])?;
        let sample = if gen.supports_conditional() {
            gen.conditional_sample(&condition, opts.k_large, rng)?
        } else {
            conditional_sample_rejection(
                &*gen,
                &condition,
                opts.k_large,
                rng,
                opts.batch_factor.saturating_mul(opts.k_large),
                opts.max_draw_factor.saturating_mul(opts.k_large),
            )?
            .table
        };
        thetas[g] = sample.column(y_col).iter().sum::<f64>() / sample.n_rows() as f64;
        deltas[g] = observed - thetas[g];
    }

    let wrapper = Arc::new(ArmShiftedGenerator::new(gen, y_col, arm_col, deltas));
    let binary_relaxed = *schema.kind(y_col) != crate::table::ColumnKind::Continuous;
    let reports = [0usize, 1].map(|g| DebiasReport {
        estimand: format!("mean:{outcome}|{arm}={g}"),
        theta_under_generator: thetas[g],
        shift: ShiftKind::ArmDelta {
            arm: g as u8,
            delta: deltas[g],
        },
        k_large: opts.k_large,
        k_cond: 0,
        fallback_events: 0,
        binary_relaxed,
        warnings: Vec::new(),
    });
    Ok((wrapper, reports))
}

/// Calibrates the shift matching `estimand` and returns the wrapped generator.
pub fn debias_for_estimand(
    gen: Arc<dyn Generator>,
    original: &Table,
    estimand: &Estimand,
    opts: &DebiasOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Arc<dyn Generator>, Vec<DebiasReport>)> {
    match estimand {
        Estimand::Mean { column } => {
            let (wrapper, report) = debias_mean(gen, original, column, opts, rng)?;
            Ok((wrapper, vec![report]))
        }
        Estimand::LinCoef { .. } => {
            let (wrapper, report) = debias_regression(gen, original, estimand, opts, rng)?;
            Ok((wrapper, vec![report]))
        }
        Estimand::RiskDifference { outcome, arm } => {
            let (wrapper, reports) = debias_mean_per_arm(gen, original, outcome, arm, opts, rng)?;
            Ok((wrapper, reports.into()))
        }
    }
}

const SPLIT_TAG_FOLDS: u64 = 0x6445_6269_6153_706c; // fold assignment
const SPLIT_TAG_FIT: u64 = 1;
const SPLIT_TAG_CALIB: u64 = 2;
const SPLIT_TAG_FULL: u64 = 3;

/// Cross-fitted variant of the shift calibration: the original data is split
/// into `splits` folds, a generator is fitted on each fold's complement, the
/// bias is estimated on the held-out fold, and the averaged bias debiases the
/// full-data generator. Costs `splits` extra fits and calibrations; off by
/// default in the study harness.
pub fn debias_with_sample_splitting(
    spec: &GeneratorSpec,
    full_gen: Arc<dyn Generator>,
    original: &Table,
    estimand: &Estimand,
    splits: usize,
    opts: &DebiasOptions,
    seed: u64,
) -> Result<(Arc<dyn Generator>, Vec<DebiasReport>)> {
    if splits < 2 {
        return Err(Error::InvalidConfig(
            "sample splitting requires at least 2 folds".into(),
        ));
    }
    let n = original.n_rows();
    if n < splits {
        return Err(Error::InvalidConfig(format!("{splits} folds for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut stream(derive_seed(seed, &[SPLIT_TAG_FOLDS])), &mut order);
    let fold_of_row: Vec<usize> = {
        let mut f = vec![0usize; n];
        for (pos, &row) in order.iter().enumerate() {
            f[row] = pos % splits;
        }
        f
    };
    let fold_tables = |fold: usize| {
        let train_rows: Vec<usize> = (0..n).filter(|&r| fold_of_row[r] != fold).collect();
        let held_rows: Vec<usize> = (0..n).filter(|&r| fold_of_row[r] == fold).collect();
        (original.take_rows(&train_rows), original.take_rows(&held_rows))
    };

    match estimand {
        Estimand::Mean { column } => {
            let mut bias_sum = 0.0;
            for fold in 0..splits {
                let (train, held) = fold_tables(fold);
                let gen = fit_generator(
                    spec,
                    &train,
                    &mut stream(derive_seed(seed, &[SPLIT_TAG_FIT, fold as u64])),
                )?;
                let theta = theta_under_generator(
                    &*gen,
                    estimand,
                    opts.k_large,
                    &mut stream(derive_seed(seed, &[SPLIT_TAG_CALIB, fold as u64])),
                )?;
                bias_sum += held.column_mean(column)? - theta;
            }
            let delta = bias_sum / splits as f64;
            let col = full_gen.schema().index(column)?;
            let wrapper = Arc::new(MeanShiftedGenerator::new(full_gen, col, delta));
            let binary_relaxed = wrapper.relaxed_binary();
            let report = DebiasReport {
                estimand: estimand.id(),
                theta_under_generator: f64::NAN,
                shift: ShiftKind::MeanDelta { delta },
                k_large: opts.k_large,
                k_cond: 0,
                fallback_events: 0,
                binary_relaxed,
                warnings: vec![format!("shift cross-fitted over {splits} folds")],
            };
            Ok((wrapper, vec![report]))
        }
        Estimand::LinCoef {
            outcome,
            exposure,
            covariates,
        } => {
            let mut b_sum = 0.0;
            let mut fallback_events = 0usize;
            for fold in 0..splits {
                let (train, held) = fold_tables(fold);
                let gen = fit_generator(
                    spec,
                    &train,
                    &mut stream(derive_seed(seed, &[SPLIT_TAG_FIT, fold as u64])),
                )?;
                let mut rng = stream(derive_seed(seed, &[SPLIT_TAG_CALIB, fold as u64]));
                let (_, _, b) = regression_calibration(
                    &gen,
                    &held,
                    estimand,
                    opts,
                    &mut rng,
                    &mut fallback_events,
                )?;
                b_sum += b;
            }
            let b = b_sum / splits as f64;

            // Shift the full-data generator by the averaged bias, centering on
            // its own conditional exposure means.
            let schema = full_gen.schema().clone();
            let y_col = schema.index(outcome)?;
            let a_col = schema.index(exposure)?;
            let covariate_cols: Vec<usize> = covariates
                .iter()
                .map(|c| schema.index(c))
                .collect::<Result<_>>()?;
            let strata = original.distinct_level_tuples(&covariate_cols);
            let mut rng = stream(derive_seed(seed, &[SPLIT_TAG_FULL]));
            let means = calibrate_conditional_means(
                &*full_gen,
                &strata,
                &covariate_cols,
                a_col,
                y_col,
                opts,
                &mut rng,
            )?;
            let fallback_mean_a =
                means.mean_a.means.values().sum::<f64>() / means.mean_a.means.len() as f64;
            let wrapper = Arc::new(RegressionShiftedGenerator::new(
                full_gen,
                y_col,
                a_col,
                b,
                means.mean_a,
                fallback_mean_a,
                opts.strict,
            ));
            let report = DebiasReport {
                estimand: estimand.id(),
                theta_under_generator: f64::NAN,
                shift: ShiftKind::RegressionB {
                    b,
                    residual_b: None,
                },
                k_large: opts.k_large,
                k_cond: opts.k_cond,
                fallback_events,
                binary_relaxed: *schema.kind(y_col) != crate::table::ColumnKind::Continuous,
                warnings: vec![format!("shift cross-fitted over {splits} folds")],
            };
            Ok((wrapper, vec![report]))
        }
        Estimand::RiskDifference { .. } => Err(Error::InvalidConfig(
            "sample splitting is not implemented for the risk difference".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dgp, DgpParams};
    use crate::rng::stream;
    use crate::table::{ColumnKind, Schema};

    fn quick_opts() -> DebiasOptions {
        DebiasOptions {
            k_large: 200_000,
            k_cond: 40_000,
            check_residual: false,
            ..DebiasOptions::default()
        }
    }

    /// Constant-output generator used for exactness checks.
    struct ConstantGenerator {
        schema: Schema,
        value: f64,
    }

    impl Generator for ConstantGenerator {
        fn schema(&self) -> &Schema {
            &self.schema
        }
        fn train_n(&self) -> usize {
            1
        }
        fn sample(&self, m: usize, _rng: &mut ChaCha8Rng) -> Result<Table> {
            Table::new(self.schema.clone(), vec![vec![self.value; m]])
        }
        fn label(&self) -> String {
            "constant".into()
        }
    }

    #[test]
    fn theta_under_constant_generator_is_exact() {
        let schema = Schema::new(vec![("x".into(), ColumnKind::Continuous)]).unwrap();
        let gen = ConstantGenerator { schema, value: 2.5 };
        let estimand = Estimand::Mean { column: "x".into() };
        let theta = theta_under_generator(&gen, &estimand, 10_000, &mut stream(3)).unwrap();
        assert_eq!(theta, 2.5);
    }

    #[test]
    fn theta_under_shifted_generator_moves_by_delta() {
        let train = sample_dgp(500, &DgpParams::default(), &mut stream(61));
        let gen = fit_generator(&GeneratorSpec::Parametric, &train, &mut stream(62)).unwrap();
        let estimand = Estimand::Mean {
            column: "age".into(),
        };
        let k = 400_000;
        let base_theta = theta_under_generator(&*gen, &estimand, k, &mut stream(63)).unwrap();
        let col = gen.schema().index("age").unwrap();
        let shifted = MeanShiftedGenerator::new(gen, col, 2.0);
        let shifted_theta = theta_under_generator(&shifted, &estimand, k, &mut stream(64)).unwrap();
        let tol = 5.0 * 10.0 / (k as f64).sqrt() * 2.0;
        assert!(
            (shifted_theta - (base_theta + 2.0)).abs() < tol,
            "{shifted_theta} vs {base_theta} + 2"
        );
    }

    #[test]
    fn mean_debias_restores_observed_mean() {
        let train = sample_dgp(500, &DgpParams::default(), &mut stream(65));
        let gen = fit_generator(
            &GeneratorSpec::SmoothedBootstrap {
                bandwidth_rule: 3.0,
            },
            &train,
            &mut stream(66),
        )
        .unwrap();
        let observed = train.column_mean("age").unwrap();
        let opts = quick_opts();
        let (debiased, report) = debias_mean(gen, &train, "age", &opts, &mut stream(67)).unwrap();

        let k = 1_000_000;
        let fresh = debiased.sample(k, &mut stream(68)).unwrap();
        let mean = fresh.column_mean("age").unwrap();
        let sd = {
            let values = fresh.column_by_name("age").unwrap();
            let v = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64;
            v.sqrt()
        };
        // Two Monte Carlo errors stack: the calibration's k_large estimate and
        // this fresh sample's own mean.
        let tol = 5.0 * sd * (1.0 / k as f64 + 1.0 / opts.k_large as f64).sqrt();
        assert!(
            (mean - observed).abs() < tol,
            "debiased mean {mean} vs observed {observed} (theta_gen {})",
            report.theta_under_generator
        );
    }

    #[test]
    fn mean_debias_on_exact_generator_is_near_noop() {
        // The parametric generator fitted on a large sample has theta close to
        // the observed mean already, so delta is small.
        let train = sample_dgp(20_000, &DgpParams::default(), &mut stream(69));
        let gen = fit_generator(&GeneratorSpec::Parametric, &train, &mut stream(70)).unwrap();
        let opts = quick_opts();
        let (wrapper, _) = debias_mean(gen, &train, "age", &opts, &mut stream(71)).unwrap();
        let bound = 5.0 * 10.0 / (opts.k_large as f64).sqrt() + 1e-2;
        assert!(
            wrapper.delta().abs() < bound,
            "delta {} exceeds {bound}",
            wrapper.delta()
        );
    }

    #[test]
    fn debias_is_idempotent_up_to_noise() {
        let train = sample_dgp(500, &DgpParams::default(), &mut stream(72));
        let gen = fit_generator(
            &GeneratorSpec::SmoothedBootstrap {
                bandwidth_rule: 3.0,
            },
            &train,
            &mut stream(73),
        )
        .unwrap();
        let opts = quick_opts();
        let (first, _) = debias_mean(gen, &train, "age", &opts, &mut stream(74)).unwrap();
        let (second, _) = debias_mean(first.clone(), &train, "age", &opts, &mut stream(75)).unwrap();
        let bound = 5.0 * 16.0 / (opts.k_large as f64).sqrt();
        assert!(
            second.delta().abs() < bound,
            "second delta {} exceeds {bound}",
            second.delta()
        );
    }

    #[test]
    fn regression_bias_closed_form_with_injected_means() {
        // Two strata with known conditional means injected directly: b matches
        // a hand computation to machine precision.
        let schema = Schema::new(vec![
            ("y".into(), ColumnKind::Continuous),
            ("a".into(), ColumnKind::Binary),
            (
                "x".into(),
                ColumnKind::Categorical(vec!["u".into(), "v".into()]),
            ),
        ])
        .unwrap();
        let original = Table::new(
            schema,
            vec![
                vec![1.0, 3.0, 2.0, 6.0, 4.0, 9.0],
                vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            ],
        )
        .unwrap();
        let x_col = 2usize;
        let mean_a = StratumMeanMap {
            columns: vec![x_col],
            means: [(vec![0usize], 0.4), (vec![1usize], 0.6)]
                .into_iter()
                .collect(),
        };
        let mean_y = StratumMeanMap {
            columns: vec![x_col],
            means: [(vec![0usize], 2.0), (vec![1usize], 6.0)]
                .into_iter()
                .collect(),
        };
        let estimand = Estimand::parse("lincoef:y~a|x").unwrap();
        let theta_gen = 1.25;
        let b = regression_bias_given_means(&original, &estimand, &mean_a, &mean_y, theta_gen)
            .unwrap();

        // Hand computation of the partialling-out ratio.
        let a_res = [-0.4, 0.6, -0.4, 0.4, -0.6, 0.4];
        let y_res = [-1.0, 1.0, 0.0, 0.0, -2.0, 3.0];
        let num: f64 = a_res.iter().zip(&y_res).map(|(a, y)| a * y).sum();
        let den: f64 = a_res.iter().map(|a| a * a).sum();
        assert!((b - (num / den - theta_gen)).abs() < 1e-10);
    }

    #[test]
    fn regression_debias_on_consistent_generator_gives_small_b() {
        // Generator fitted to the original data itself: the bias is pure
        // Monte Carlo noise. Bound it by the spread over repeated seeds.
        let train = sample_dgp(500, &DgpParams::default(), &mut stream(76));
        let gen = fit_generator(&GeneratorSpec::Parametric, &train, &mut stream(77)).unwrap();
        let estimand = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        let opts = DebiasOptions {
            k_large: 100_000,
            k_cond: 25_000,
            check_residual: false,
            ..DebiasOptions::default()
        };
        let mut bs = Vec::new();
        for seed in 0..8 {
            let (wrapper, _) = debias_regression(
                gen.clone(),
                &train,
                &estimand,
                &opts,
                &mut stream(800 + seed),
            )
            .unwrap();
            bs.push(wrapper.b());
        }
        let mean_b = bs.iter().sum::<f64>() / bs.len() as f64;
        let sd_b = (bs.iter().map(|b| (b - mean_b).powi(2)).sum::<f64>() / (bs.len() - 1) as f64)
            .sqrt();
        assert!(
            mean_b.abs() < 5.0 * sd_b.max(1e-3),
            "b {mean_b} too large for noise sd {sd_b}"
        );
    }

    #[test]
    fn regression_debias_residual_is_noise_level() {
        let train = sample_dgp(400, &DgpParams::default(), &mut stream(78));
        let gen = fit_generator(
            &GeneratorSpec::SmoothedBootstrap {
                bandwidth_rule: 2.0,
            },
            &train,
            &mut stream(79),
        )
        .unwrap();
        let estimand = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        let opts = DebiasOptions {
            k_large: 100_000,
            k_cond: 25_000,
            check_residual: true,
            ..DebiasOptions::default()
        };
        // Spread of b over independent calibrations of the same generator.
        let mut bs = Vec::new();
        for seed in 0..8 {
            let mut no_check = opts.clone();
            no_check.check_residual = false;
            let (w, _) = debias_regression(
                gen.clone(),
                &train,
                &estimand,
                &no_check,
                &mut stream(900 + seed),
            )
            .unwrap();
            bs.push(w.b());
        }
        let mean_b = bs.iter().sum::<f64>() / bs.len() as f64;
        let se_b = (bs.iter().map(|b| (b - mean_b).powi(2)).sum::<f64>() / (bs.len() - 1) as f64)
            .sqrt();

        let (_, report) = debias_regression(gen, &train, &estimand, &opts, &mut stream(990)).unwrap();
        match report.shift {
            ShiftKind::RegressionB {
                residual_b: Some(residual),
                ..
            } => {
                assert!(
                    residual.abs() <= 5.0 * se_b.max(1e-3),
                    "residual {residual} vs se_b {se_b}"
                );
            }
            ref other => panic!("unexpected shift {other:?}"),
        }
    }

    #[test]
    fn regression_shift_preserves_conditional_outcome_means() {
        let train = sample_dgp(400, &DgpParams::default(), &mut stream(81));
        let gen = fit_generator(&GeneratorSpec::Parametric, &train, &mut stream(82)).unwrap();
        let estimand = Estimand::parse("lincoef:bp~therapy|stage").unwrap();
        let opts = quick_opts();
        let (wrapper, _) =
            debias_regression(gen.clone(), &train, &estimand, &opts, &mut stream(83)).unwrap();
        let b = wrapper.b();

        let stage_col = train.schema().index("stage").unwrap();
        let k = 50_000;
        for level in 0..2usize {
            let condition = Condition::from_levels(train.schema(), &[(stage_col, level)]).unwrap();
            let base = gen
                .conditional_sample(&condition, k, &mut stream(84 + level as u64))
                .unwrap();
            let shifted = wrapper
                .conditional_sample(&condition, k, &mut stream(184 + level as u64))
                .unwrap();
            let base_mean = base.column_mean("bp").unwrap();
            let shifted_mean = shifted.column_mean("bp").unwrap();
            // Independent k-draw means plus the centering error of E(A|X).
            let tol = 5.0 * 15.0 * (2.0 / k as f64).sqrt()
                + 5.0 * b.abs() * 0.5 / (opts.k_cond as f64).sqrt()
                + 5.0 * b.abs() * 0.5 * (1.0 / k as f64).sqrt();
            assert!(
                (shifted_mean - base_mean).abs() < tol,
                "stage {level}: {shifted_mean} vs {base_mean}"
            );
        }
    }

    #[test]
    fn per_arm_debias_shifts_each_arm() {
        let train = sample_dgp(600, &DgpParams::default(), &mut stream(85));
        let gen = fit_generator(
            &GeneratorSpec::SmoothedBootstrap {
                bandwidth_rule: 2.0,
            },
            &train,
            &mut stream(86),
        )
        .unwrap();
        let opts = DebiasOptions {
            k_large: 100_000,
            ..quick_opts()
        };
        let (wrapper, reports) =
            debias_mean_per_arm(gen, &train, "bp", "therapy", &opts, &mut stream(87)).unwrap();
        assert_eq!(reports.len(), 2);

        // Fresh per-arm means from the wrapper match the original per-arm means.
        let sample = wrapper.sample(400_000, &mut stream(88)).unwrap();
        let sample_parts = sample.split_by("therapy").unwrap();
        let original_parts = train.split_by("therapy").unwrap();
        for g in 0..2usize {
            let got = sample_parts[&g].column_mean("bp").unwrap();
            let want = original_parts[&g].column_mean("bp").unwrap();
            let k = sample_parts[&g].n_rows() as f64;
            let tol = 5.0 * 16.0 * (1.0 / k + 1.0 / opts.k_large as f64).sqrt();
            assert!((got - want).abs() < tol, "arm {g}: {got} vs {want}");
        }
    }

    #[test]
    fn per_arm_debias_requires_both_arms() {
        let params = DgpParams {
            p_therapy: 1e-9,
            ..DgpParams::default()
        };
        let train = sample_dgp(100, &params, &mut stream(89));
        let gen = fit_generator(
            &GeneratorSpec::SmoothedBootstrap {
                bandwidth_rule: 1.0,
            },
            &train,
            &mut stream(90),
        )
        .unwrap();
        let err = debias_mean_per_arm(
            gen,
            &train,
            "bp",
            "therapy",
            &quick_opts(),
            &mut stream(91),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::EmptyArm { .. } | Error::ConditionTooRare { .. }
        ));
    }

    #[test]
    fn sample_splitting_mean_mode_runs() {
        let train = sample_dgp(300, &DgpParams::default(), &mut stream(92));
        let spec = GeneratorSpec::SmoothedBootstrap {
            bandwidth_rule: 2.0,
        };
        let full = fit_generator(&spec, &train, &mut stream(93)).unwrap();
        let estimand = Estimand::Mean {
            column: "age".into(),
        };
        let opts = DebiasOptions {
            k_large: 50_000,
            ..quick_opts()
        };
        let (wrapper, reports) =
            debias_with_sample_splitting(&spec, full, &train, &estimand, 5, &opts, 777).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].warnings[0].contains("5 folds"));
        // The cross-fitted delta still lands near the plain delta's scale.
        let sample = wrapper.sample(10_000, &mut stream(94)).unwrap();
        assert_eq!(sample.n_rows(), 10_000);
    }
}
