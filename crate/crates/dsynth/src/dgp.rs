//! Ground-truth data generating process for the bundled simulation study.
//!
//! Four variables of a hypothetical disease cohort: `age` (normal), an ordinal
//! atherosclerosis `stage` driven by age through a cumulative-logit model, a
//! randomized binary `therapy`, and a continuous blood pressure `bp` whose mean
//! is additive in stage and therapy. The known population parameters (mean age
//! and the therapy coefficient) serve as the truth in coverage studies.
//!
//! Draw order per record is fixed: age, stage, therapy, bp, one stream value
//! each (see [`crate::rng`] for the transforms), so samples are reproducible
//! bit for bit from a seed.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::{draw_normal, uniform53, ChaCha8Rng};
use crate::table::{ColumnKind, Schema, Table};

/// Parameters of the process; defaults are the bundled study constants.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpParams {
    pub mean_age: f64,
    pub sd_age: f64,
    /// Cumulative-logit intercepts for stages I..III; strictly increasing so
    /// the category probabilities are non-negative.
    pub nu_intercepts: [f64; 3],
    pub nu_age: f64,
    pub p_therapy: f64,
    /// Blood-pressure offsets for stages I..IV.
    pub beta_stage: [f64; 4],
    pub beta_therapy: f64,
    pub baseline_bp: f64,
    pub sd_bp: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            mean_age: 50.0,
            sd_age: 10.0,
            nu_intercepts: [2.0, 3.0, 4.0],
            nu_age: 0.05,
            p_therapy: 0.5,
            beta_stage: [0.0, 10.0, 20.0, 30.0],
            beta_therapy: -20.0,
            baseline_bp: 120.0,
            sd_bp: 10.0,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd_age > 0.0) {
            return Err(Error::InvalidConfig("dgp: sd_age must be positive".into()));
        }
        if !(self.sd_bp > 0.0) {
            return Err(Error::InvalidConfig("dgp: sd_bp must be positive".into()));
        }
        if !(self.p_therapy > 0.0 && self.p_therapy < 1.0) {
            return Err(Error::InvalidConfig(
                "dgp: p_therapy must lie strictly between 0 and 1".into(),
            ));
        }
        if !(self.nu_intercepts[0] < self.nu_intercepts[1]
            && self.nu_intercepts[1] < self.nu_intercepts[2])
        {
            return Err(Error::InvalidConfig(
                "dgp: nu_intercepts must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// The estimable population parameters implied by [`DgpParams`]. Therapy is
/// randomized and the outcome model is linear, so the partialling-out estimand
/// equals the therapy coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueParams {
    pub mean_age: f64,
    pub therapy_effect: f64,
}

pub fn true_parameters(params: &DgpParams) -> TrueParams {
    TrueParams {
        mean_age: params.mean_age,
        therapy_effect: params.beta_therapy,
    }
}

/// Schema of the generated table: age, stage, therapy, bp.
pub fn dgp_schema() -> Schema {
    Schema::new(vec![
        ("age".into(), ColumnKind::Continuous),
        (
            "stage".into(),
            ColumnKind::Ordinal(vec!["I".into(), "II".into(), "III".into(), "IV".into()]),
        ),
        ("therapy".into(), ColumnKind::Binary),
        ("bp".into(), ColumnKind::Continuous),
    ])
    .expect("static schema is valid")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stage category probabilities at a given age: differences of the cumulative
/// logits `sigmoid(nu_k - nu_age * age)`. Non-negative and summing to one
/// because the intercepts increase.
pub fn stage_probabilities(age: f64, params: &DgpParams) -> [f64; 4] {
    let cum: Vec<f64> = params
        .nu_intercepts
        .iter()
        .map(|nu| sigmoid(nu - params.nu_age * age))
        .collect();
    [
        cum[0],
        cum[1] - cum[0],
        cum[2] - cum[1],
        1.0 - cum[2],
    ]
}

/// Draws `n` records of the process.
pub fn sample_dgp(n: usize, params: &DgpParams, rng: &mut ChaCha8Rng) -> Table {
    let mut age = Vec::with_capacity(n);
    let mut stage = Vec::with_capacity(n);
    let mut therapy = Vec::with_capacity(n);
    let mut bp = Vec::with_capacity(n);
    for _ in 0..n {
        let a = draw_normal(rng, params.mean_age, params.sd_age);
        // The cumulative logits are the cumulative category probabilities, so a
        // single uniform picks the stage by inversion.
        let u = uniform53(rng);
        let mut s = 3usize;
        for (k, nu) in params.nu_intercepts.iter().enumerate() {
            if u < sigmoid(nu - params.nu_age * a) {
                s = k;
                break;
            }
        }
        let t = if uniform53(rng) < params.p_therapy { 1.0 } else { 0.0 };
        let mu = params.baseline_bp + params.beta_stage[s] + params.beta_therapy * t;
        let y = draw_normal(rng, mu, params.sd_bp);
        age.push(a);
        stage.push(s as f64);
        therapy.push(t);
        bp.push(y);
    }
    Table::new(dgp_schema(), vec![age, stage, therapy, bp]).expect("generated data is schema-valid")
}
