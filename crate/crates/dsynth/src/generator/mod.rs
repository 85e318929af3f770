//! Pluggable generative models and the shift wrappers built on top of them.
//!
//! Three self-contained generators stand in for trained deep generative
//! models:
//!
//! * [`parametric`]: the sequential parametric model matching the bundled
//!   process (root-n consistent; the classical regime where the
//!   `sqrt(1 + m/n)` correction alone already works),
//! * [`bootstrap`]: a kernel-smoothed bootstrap whose fit error deliberately
//!   shrinks at the kernel rate `n^(-1/5)` instead of root-n, mimicking the
//!   slow statistical convergence of flexible generators,
//! * [`copula`]: a Gaussian copula over empirical marginals, exercising
//!   misspecification.
//!
//! Fitted generators are immutable; sampling draws from a caller-owned stream,
//! so one generator can serve many concurrent samplers.

pub mod bootstrap;
pub mod copula;
pub mod parametric;
pub mod shift;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use crate::table::{Condition, Schema, Table};

/// A fitted generative model over a fixed schema.
pub trait Generator: Send + Sync {
    fn schema(&self) -> &Schema;

    /// Size of the training dataset, the `n` of the `sqrt(1 + m/n)` correction.
    fn train_n(&self) -> usize;

    /// Draws `m` rows. Errors only propagate from shift wrappers in strict
    /// mode; base generators always succeed.
    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table>;

    /// Whether [`Generator::conditional_sample`] is implemented directly.
    /// Rejection sampling (see [`conditional_sample_rejection`]) works for any
    /// generator.
    fn supports_conditional(&self) -> bool {
        false
    }

    /// Draws `m` rows satisfying the condition, when supported directly.
    fn conditional_sample(
        &self,
        _condition: &Condition,
        _m: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Table> {
        Err(Error::ConditionalUnsupported)
    }

    /// Stable label used in study outputs.
    fn label(&self) -> String;

    /// Non-fatal notes from fitting (degenerate columns, fallbacks).
    fn warnings(&self) -> &[String] {
        &[]
    }
}

/// Which generator to fit; the serialized form used in configs.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Parametric,
    SmoothedBootstrap { bandwidth_rule: f64 },
    GaussianCopula,
}

impl GeneratorSpec {
    /// Parses `parametric`, `smoothed_bootstrap[:rule]`, `gaussian_copula`.
    pub fn parse(text: &str) -> Result<GeneratorSpec> {
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        match (head, arg) {
            ("parametric", None) => Ok(GeneratorSpec::Parametric),
            ("gaussian_copula", None) => Ok(GeneratorSpec::GaussianCopula),
            ("smoothed_bootstrap", arg) => {
                let bandwidth_rule = match arg {
                    None => 1.0,
                    Some(a) => a.parse::<f64>().map_err(|_| {
                        Error::InvalidConfig(format!("bad bandwidth rule in `{text}`"))
                    })?,
                };
                if !(bandwidth_rule >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "bandwidth rule must be non-negative in `{text}`"
                    )));
                }
                Ok(GeneratorSpec::SmoothedBootstrap { bandwidth_rule })
            }
            _ => Err(Error::InvalidConfig(format!("unknown generator `{text}`"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            GeneratorSpec::Parametric => "parametric".to_string(),
            GeneratorSpec::SmoothedBootstrap { bandwidth_rule } => {
                format!("smoothed_bootstrap:{bandwidth_rule}")
            }
            GeneratorSpec::GaussianCopula => "gaussian_copula".to_string(),
        }
    }
}

/// Fits the requested generator. The stream seeds any randomness of the fit
/// itself (the smoothed bootstrap draws its drift terms here), so a
/// (spec, train, seed) triple pins the fitted generator exactly.
pub fn fit_generator(
    spec: &GeneratorSpec,
    train: &Table,
    rng: &mut ChaCha8Rng,
) -> Result<Arc<dyn Generator>> {
    if train.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    match spec {
        GeneratorSpec::Parametric => Ok(Arc::new(parametric::ParametricGenerator::fit(train)?)),
        GeneratorSpec::SmoothedBootstrap { bandwidth_rule } => Ok(Arc::new(
            bootstrap::SmoothedBootstrapGenerator::fit(train, *bandwidth_rule, rng)?,
        )),
        GeneratorSpec::GaussianCopula => {
            Ok(Arc::new(copula::GaussianCopulaGenerator::fit(train)?))
        }
    }
}

/// Result of rejection-based conditional sampling.
#[derive(Debug)]
pub struct ConditionalDraw {
    pub table: Table,
    /// Unconditional rows drawn before `m` matches were collected.
    pub draws_used: usize,
}

/// Draws `m` conforming rows by filtering unconditional batches.
///
/// Batches of `batch` rows are drawn until `m` rows satisfy the condition;
/// if `max_draws` unconditional rows are exhausted first the condition is too
/// rare and the caller decides the fallback.
pub fn conditional_sample_rejection(
    gen: &dyn Generator,
    condition: &Condition,
    m: usize,
    rng: &mut ChaCha8Rng,
    batch: usize,
    max_draws: usize,
) -> Result<ConditionalDraw> {
    assert!(m >= 1, "conditional sampling requires m >= 1");
    assert!(batch >= 1);
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    let mut chunks: Vec<Table> = Vec::new();
    let mut drawn = 0usize;
    let mut matched = 0usize;
    while matched < m && drawn < max_draws {
        let take = batch.min(max_draws - drawn);
        let chunk = gen.sample(take, rng)?;
        drawn += chunk.n_rows();
        kept.clear();
        for row in 0..chunk.n_rows() {
            if condition.matches(&chunk, row) {
                kept.push(row);
                matched += 1;
                if matched == m {
                    break;
                }
            }
        }
        chunks.push(chunk.take_rows(&kept));
    }
    if matched < m {
        return Err(Error::ConditionTooRare {
            condition: condition.describe(gen.schema()),
            requested: m,
            matched,
            drawn,
        });
    }
    Ok(ConditionalDraw {
        table: concat_tables(gen.schema(), &chunks),
        draws_used: drawn,
    })
}

/// Default batch size for rejection sampling: `10 m`.
pub fn default_batch(m: usize) -> usize {
    m.saturating_mul(10)
}

/// Default draw budget for rejection sampling: `1000 m`.
pub fn default_max_draws(m: usize) -> usize {
    m.saturating_mul(1000)
}

/// Conditional sample through the direct sampler when the generator has one,
/// falling back to rejection with the default budgets.
pub fn conditional_or_rejection(
    gen: &dyn Generator,
    condition: &Condition,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Table> {
    if gen.supports_conditional() {
        gen.conditional_sample(condition, m, rng)
    } else {
        conditional_sample_rejection(gen, condition, m, rng, default_batch(m), default_max_draws(m))
            .map(|draw| draw.table)
    }
}

fn concat_tables(schema: &Schema, parts: &[Table]) -> Table {
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for part in parts {
        for (idx, column) in columns.iter_mut().enumerate() {
            column.extend_from_slice(part.column(idx));
        }
    }
    Table::new(schema.clone(), columns).expect("concatenation preserves validity")
}
