//! Standard errors, the synthetic-data correction factor, confidence
//! intervals, and the degenerate-SE filter.
//!
//! Two standard errors are reported for every fit:
//!
//! * `se_mle` is the classical one (sample SD over sqrt m for the mean, the
//!   homoskedastic dummy-regression SE for the coefficient, the two-sample
//!   proportion SE for the risk difference). On synthetic data it is inflated
//!   by `sqrt(1 + m/n)`, which accounts for the sampling variability of a
//!   synthetic dataset of size `m` drawn from a generator trained on `n` rows.
//! * `se_eic` is the influence-curve form `sqrt((1/m + 1/n) * mean(phi^2))`,
//!   which remains valid when data-adaptive nuisance estimation makes the
//!   classical SE optimistic.
//!
//! Variance denominators differ by convention and are kept as documented: the
//! mean's `se_mle` uses the m-1 sample variance while `mean(phi^2)` is the
//! plug-in with denominator m, so for the mean
//! `se_eic / se_mle_corrected = sqrt((m-1)/m)` exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorFit, FitDetail};
use crate::rng::normal_quantile;

/// Upper 97.5% standard-normal quantile, pinned.
pub const Z_975: f64 = 1.959963984540054;

/// Estimates with an SE outside `[SE_MIN, SE_MAX]` are non-estimable and get
/// filtered (and counted) by the study harness.
pub const SE_MIN: f64 = 1e-10;
pub const SE_MAX: f64 = 1e2;

/// Provenance of an analysis sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Original,
    DefaultSynthetic,
    DebiasedSynthetic,
}

impl DataKind {
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, DataKind::Original)
    }

    pub fn label(&self) -> &'static str {
        match self {
            DataKind::Original => "original",
            DataKind::DefaultSynthetic => "default",
            DataKind::DebiasedSynthetic => "debiased",
        }
    }

    pub fn parse(text: &str) -> Result<DataKind> {
        match text {
            "original" => Ok(DataKind::Original),
            "default" => Ok(DataKind::DefaultSynthetic),
            "debiased" => Ok(DataKind::DebiasedSynthetic),
            other => Err(Error::InvalidConfig(format!("unknown data kind `{other}`"))),
        }
    }
}

/// Which standard error drives the reported confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    Mle,
    Eic,
}

impl SeMethod {
    pub fn parse(text: &str) -> Result<SeMethod> {
        match text {
            "mle" => Ok(SeMethod::Mle),
            "eic" => Ok(SeMethod::Eic),
            other => Err(Error::InvalidConfig(format!("unknown se method `{other}`"))),
        }
    }
}

/// Classical standard error of a fit.
pub fn se_mle(fit: &EstimatorFit) -> f64 {
    let m = fit.n_used as f64;
    match &fit.detail {
        FitDetail::Mean { sample_var } => (sample_var / m).sqrt(),
        FitDetail::LinCoef {
            denominator,
            rss,
            n_params,
            ..
        } => {
            let df = fit.n_used.saturating_sub(*n_params);
            if df == 0 {
                return 0.0;
            }
            let sigma_sq = rss / df as f64;
            (sigma_sq / denominator).sqrt()
        }
        FitDetail::RiskDifference { var, count, .. } => {
            (var[0] / count[0] as f64 + var[1] / count[1] as f64).sqrt()
        }
    }
}

/// `sqrt(1 + m/n)`, the synthetic-data SE inflation.
pub fn correction_factor(n: usize, m: usize) -> f64 {
    (1.0 + m as f64 / n as f64).sqrt()
}

/// Influence-curve standard error `sqrt((1/m + 1/n) * mean(phi^2))` with
/// `m = fit.n_used` and `n` the original-data size.
pub fn se_eic(fit: &EstimatorFit, n: usize) -> f64 {
    let m = fit.n_used as f64;
    ((1.0 / m + 1.0 / n as f64) * fit.mean_eic_sq()).sqrt()
}

/// Two-sided Wald interval at the given confidence level.
pub fn wald_ci(theta: f64, se: f64, level: f64) -> (f64, f64) {
    let z = if level == 0.95 {
        Z_975
    } else {
        normal_quantile(0.5 + level / 2.0)
    };
    (theta - z * se, theta + z * se)
}

/// Inclusive containment check.
pub fn covers(ci: (f64, f64), truth: f64) -> bool {
    ci.0 <= truth && truth <= ci.1
}

/// A complete analysis result for one estimand on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub data_kind: DataKind,
    pub theta: f64,
    pub se_mle: f64,
    pub se_mle_corrected: f64,
    pub se_eic: f64,
    pub se_method: SeMethod,
    pub ci_level: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Original-data sample size.
    pub n: usize,
    /// Analysis sample size.
    pub m: usize,
}

impl EstimateReport {
    /// Assembles the report. `n` is the original sample size backing a
    /// synthetic dataset; for original data it equals `m` and no correction is
    /// applied.
    pub fn build(
        fit: &EstimatorFit,
        estimand_id: String,
        data_kind: DataKind,
        n: usize,
        se_method: SeMethod,
        ci_level: f64,
    ) -> EstimateReport {
        let m = fit.n_used;
        let raw = se_mle(fit);
        let corrected = if data_kind.is_synthetic() {
            raw * correction_factor(n, m)
        } else {
            raw
        };
        let eic = se_eic(fit, n);
        let se_used = match se_method {
            SeMethod::Mle => corrected,
            SeMethod::Eic => eic,
        };
        let (ci_low, ci_high) = wald_ci(fit.theta, se_used, ci_level);
        EstimateReport {
            estimand: estimand_id,
            data_kind,
            theta: fit.theta,
            se_mle: raw,
            se_mle_corrected: corrected,
            se_eic: eic,
            se_method,
            ci_level,
            ci_low,
            ci_high,
            n,
            m,
        }
    }

    /// The SE backing the reported interval.
    pub fn se_for_ci(&self) -> f64 {
        match self.se_method {
            SeMethod::Mle => self.se_mle_corrected,
            SeMethod::Eic => self.se_eic,
        }
    }

    /// True when the CI-driving SE is numerically degenerate (see `SE_MIN`,
    /// `SE_MAX`); such estimates are excluded from study aggregates.
    pub fn is_degenerate(&self) -> bool {
        let se = self.se_for_ci();
        !se.is_finite() || se < SE_MIN || se > SE_MAX
    }
}
