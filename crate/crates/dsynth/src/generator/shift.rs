//! Shift wrappers: debiased generators are base generators plus an additive
//! correction on one column.
//!
//! Wrappers delegate sampling to the base generator on the same stream, so a
//! wrapped sample equals the base sample with the shift applied value by
//! value. Shifting a binary column produces values off the {0,1} grid; the
//! wrapped schema relaxes that column to continuous and downstream mean-style
//! analyses stay valid.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use crate::table::{ColumnKind, Condition, Schema, Table};

use super::Generator;

fn relaxed_schema(base: &Schema, column: usize) -> (Schema, bool) {
    if *base.kind(column) == ColumnKind::Continuous {
        (base.clone(), false)
    } else {
        (base.with_continuous(column), true)
    }
}

/// Adds a constant to one column: the mean-targeting debiased generator.
pub struct MeanShiftedGenerator {
    base: Arc<dyn Generator>,
    column: usize,
    delta: f64,
    schema: Schema,
    relaxed: bool,
}

impl MeanShiftedGenerator {
    pub fn new(base: Arc<dyn Generator>, column: usize, delta: f64) -> MeanShiftedGenerator {
        let (schema, relaxed) = relaxed_schema(base.schema(), column);
        MeanShiftedGenerator {
            base,
            column,
            delta,
            schema,
            relaxed,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn relaxed_binary(&self) -> bool {
        self.relaxed
    }

    fn shift(&self, table: Table) -> Table {
        let shifted: Vec<f64> = table
            .column(self.column)
            .iter()
            .map(|v| v + self.delta)
            .collect();
        table.with_column_replaced(self.column, shifted, self.relaxed)
    }
}

impl Generator for MeanShiftedGenerator {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn train_n(&self) -> usize {
        self.base.train_n()
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        Ok(self.shift(self.base.sample(m, rng)?))
    }

    fn supports_conditional(&self) -> bool {
        self.base.supports_conditional()
    }

    fn conditional_sample(
        &self,
        condition: &Condition,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Table> {
        Ok(self.shift(self.base.conditional_sample(condition, m, rng)?))
    }

    fn label(&self) -> String {
        format!("{}+mean_shift", self.base.label())
    }
}

/// Conditional means keyed by the level tuple of a set of discrete columns.
#[derive(Debug, Clone)]
pub struct StratumMeanMap {
    pub columns: Vec<usize>,
    pub means: BTreeMap<Vec<usize>, f64>,
}

impl StratumMeanMap {
    pub fn get(&self, table: &Table, row: usize) -> Option<f64> {
        self.means.get(&table.level_tuple(row, &self.columns)).copied()
    }

    pub fn describe_key(&self, schema: &Schema, key: &[usize]) -> String {
        self.columns
            .iter()
            .zip(key)
            .map(|(&c, &l)| format!("{}={}", schema.name(c), schema.level_label(c, l)))
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

/// Adds `b * (A - E(A|X))` to the outcome: the coefficient-targeting debiased
/// generator.
///
/// In strict mode a sampled row whose covariate tuple is missing from the
/// calibration map is an error; in lenient mode the marginal exposure mean
/// stands in and the event is counted.
pub struct RegressionShiftedGenerator {
    base: Arc<dyn Generator>,
    outcome: usize,
    exposure: usize,
    b: f64,
    cond_mean_a: StratumMeanMap,
    fallback_mean_a: f64,
    strict: bool,
    schema: Schema,
    relaxed: bool,
    fallback_events: AtomicUsize,
}

impl RegressionShiftedGenerator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: Arc<dyn Generator>,
        outcome: usize,
        exposure: usize,
        b: f64,
        cond_mean_a: StratumMeanMap,
        fallback_mean_a: f64,
        strict: bool,
    ) -> RegressionShiftedGenerator {
        let (schema, relaxed) = relaxed_schema(base.schema(), outcome);
        RegressionShiftedGenerator {
            base,
            outcome,
            exposure,
            b,
            cond_mean_a,
            fallback_mean_a,
            strict,
            schema,
            relaxed,
            fallback_events: AtomicUsize::new(0),
        }
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Lenient-mode substitutions observed while sampling.
    pub fn fallback_events(&self) -> usize {
        self.fallback_events.load(Ordering::Relaxed)
    }

    fn shift(&self, table: Table) -> Result<Table> {
        let mut shifted = table.column(self.outcome).to_vec();
        for row in 0..table.n_rows() {
            let mean_a = match self.cond_mean_a.get(&table, row) {
                Some(mean) => mean,
                None if self.strict => {
                    let key = table.level_tuple(row, &self.cond_mean_a.columns);
                    return Err(Error::UnseenStratum {
                        stratum: self.cond_mean_a.describe_key(table.schema(), &key),
                    });
                }
                None => {
                    self.fallback_events.fetch_add(1, Ordering::Relaxed);
                    self.fallback_mean_a
                }
            };
            shifted[row] += self.b * (table.value(row, self.exposure) - mean_a);
        }
        Ok(table.with_column_replaced(self.outcome, shifted, self.relaxed))
    }
}

impl Generator for RegressionShiftedGenerator {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn train_n(&self) -> usize {
        self.base.train_n()
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        self.shift(self.base.sample(m, rng)?)
    }

    fn supports_conditional(&self) -> bool {
        self.base.supports_conditional()
    }

    fn conditional_sample(
        &self,
        condition: &Condition,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Table> {
        self.shift(self.base.conditional_sample(condition, m, rng)?)
    }

    fn label(&self) -> String {
        format!("{}+regression_shift", self.base.label())
    }
}

/// Adds a per-arm constant to the outcome: the risk-difference debiased
/// generator of the two-arm analysis.
pub struct ArmShiftedGenerator {
    base: Arc<dyn Generator>,
    outcome: usize,
    arm: usize,
    deltas: [f64; 2],
    schema: Schema,
    relaxed: bool,
}

impl ArmShiftedGenerator {
    pub fn new(
        base: Arc<dyn Generator>,
        outcome: usize,
        arm: usize,
        deltas: [f64; 2],
    ) -> ArmShiftedGenerator {
        let (schema, relaxed) = relaxed_schema(base.schema(), outcome);
        ArmShiftedGenerator {
            base,
            outcome,
            arm,
            deltas,
            schema,
            relaxed,
        }
    }

    pub fn deltas(&self) -> [f64; 2] {
        self.deltas
    }

    fn shift(&self, table: Table) -> Table {
        let arms = table.column(self.arm);
        let shifted: Vec<f64> = table
            .column(self.outcome)
            .iter()
            .zip(arms)
            .map(|(y, a)| y + self.deltas[*a as usize])
            .collect();
        table.with_column_replaced(self.outcome, shifted, self.relaxed)
    }
}

impl Generator for ArmShiftedGenerator {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn train_n(&self) -> usize {
        self.base.train_n()
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        Ok(self.shift(self.base.sample(m, rng)?))
    }

    fn supports_conditional(&self) -> bool {
        self.base.supports_conditional()
    }

    fn conditional_sample(
        &self,
        condition: &Condition,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Table> {
        Ok(self.shift(self.base.conditional_sample(condition, m, rng)?))
    }

    fn label(&self) -> String {
        format!("{}+arm_shift", self.base.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dgp, DgpParams};
    use crate::generator::{fit_generator, GeneratorSpec};
    use crate::rng::stream;

    fn base_generator(seed: u64) -> Arc<dyn Generator> {
        let train = sample_dgp(400, &DgpParams::default(), &mut stream(seed));
        fit_generator(&GeneratorSpec::Parametric, &train, &mut stream(seed + 1)).unwrap()
    }

    #[test]
    fn mean_shift_moves_every_value_exactly() {
        let base = base_generator(41);
        let col = base.schema().index("age").unwrap();
        let shifted = MeanShiftedGenerator::new(base.clone(), col, 2.5);

        let raw = base.sample(10_000, &mut stream(7)).unwrap();
        let moved = shifted.sample(10_000, &mut stream(7)).unwrap();
        for row in 0..raw.n_rows() {
            assert_eq!(moved.value(row, col), raw.value(row, col) + 2.5);
        }
        let mean_raw = raw.column_mean("age").unwrap();
        let mean_moved = moved.column_mean("age").unwrap();
        assert!((mean_moved - (mean_raw + 2.5)).abs() < 1e-10);
    }

    #[test]
    fn zero_shift_is_identity() {
        let base = base_generator(43);
        let col = base.schema().index("age").unwrap();
        let shifted = MeanShiftedGenerator::new(base.clone(), col, 0.0);
        let raw = base.sample(500, &mut stream(9)).unwrap();
        let moved = shifted.sample(500, &mut stream(9)).unwrap();
        assert_eq!(raw, moved);
    }

    #[test]
    fn binary_shift_relaxes_schema() {
        let base = base_generator(45);
        let col = base.schema().index("therapy").unwrap();
        let shifted = MeanShiftedGenerator::new(base, col, 0.1);
        assert!(shifted.relaxed_binary());
        assert_eq!(
            shifted.schema().kind_of("therapy").unwrap(),
            &ColumnKind::Continuous
        );
        let sample = shifted.sample(100, &mut stream(10)).unwrap();
        assert!(sample
            .column(col)
            .iter()
            .all(|&v| v == 0.1 || v == 1.1));
    }

    #[test]
    fn regression_shift_strict_vs_lenient() {
        let base = base_generator(47);
        let schema = base.schema().clone();
        let outcome = schema.index("bp").unwrap();
        let exposure = schema.index("therapy").unwrap();
        let stage = schema.index("stage").unwrap();
        // Calibration map missing stage III and IV.
        let map = StratumMeanMap {
            columns: vec![stage],
            means: [(vec![0usize], 0.5), (vec![1usize], 0.5)]
                .into_iter()
                .collect(),
        };
        let strict =
            RegressionShiftedGenerator::new(base.clone(), outcome, exposure, 3.0, map.clone(), 0.5, true);
        let err = strict.sample(2000, &mut stream(11)).unwrap_err();
        assert!(matches!(err, Error::UnseenStratum { .. }));

        let lenient =
            RegressionShiftedGenerator::new(base, outcome, exposure, 3.0, map, 0.5, false);
        let sample = lenient.sample(2000, &mut stream(11)).unwrap();
        assert!(lenient.fallback_events() > 0);
        assert_eq!(sample.n_rows(), 2000);
    }

    #[test]
    fn regression_shift_applies_b_times_centered_exposure() {
        let base = base_generator(49);
        let schema = base.schema().clone();
        let outcome = schema.index("bp").unwrap();
        let exposure = schema.index("therapy").unwrap();
        let stage = schema.index("stage").unwrap();
        let map = StratumMeanMap {
            columns: vec![stage],
            means: (0..4).map(|l| (vec![l], 0.25 * l as f64)).collect(),
        };
        let wrapper = RegressionShiftedGenerator::new(
            base.clone(),
            outcome,
            exposure,
            2.0,
            map.clone(),
            0.5,
            true,
        );
        let raw = base.sample(300, &mut stream(12)).unwrap();
        let moved = wrapper.sample(300, &mut stream(12)).unwrap();
        for row in 0..raw.n_rows() {
            let a = raw.value(row, exposure);
            let mean_a = map.get(&raw, row).unwrap();
            let expected = raw.value(row, outcome) + 2.0 * (a - mean_a);
            assert_eq!(moved.value(row, outcome), expected);
            // Exposure and covariates untouched.
            assert_eq!(moved.value(row, exposure), a);
            assert_eq!(moved.value(row, stage), raw.value(row, stage));
        }
    }

    #[test]
    fn arm_shift_applies_per_arm_delta() {
        let base = base_generator(51);
        let outcome = base.schema().index("bp").unwrap();
        let arm = base.schema().index("therapy").unwrap();
        let wrapper = ArmShiftedGenerator::new(base.clone(), outcome, arm, [1.0, -1.0]);
        let raw = base.sample(400, &mut stream(13)).unwrap();
        let moved = wrapper.sample(400, &mut stream(13)).unwrap();
        for row in 0..raw.n_rows() {
            let delta = if raw.value(row, arm) == 1.0 { -1.0 } else { 1.0 };
            assert_eq!(moved.value(row, outcome), raw.value(row, outcome) + delta);
        }
    }
}
