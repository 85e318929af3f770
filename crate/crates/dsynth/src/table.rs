//! Schema-typed tabular data.
//!
//! A [`Table`] stores complete-case data column-major as `f64`: continuous values
//! directly, binary values as 0/1, ordinal and categorical values as level
//! indices into the schema's level list. Tables are immutable after
//! construction; every operation that "changes" data builds a new table, so
//! tables can be shared freely across concurrent study runs.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Column type. Ordinal levels are ordered, categorical levels are not;
/// estimators treat both as discrete strata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Binary,
    Ordinal(Vec<String>),
    Categorical(Vec<String>),
}

impl ColumnKind {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, ColumnKind::Continuous)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, ColumnKind::Continuous | ColumnKind::Binary)
    }

    /// Level labels for discrete kinds. Binary levels are the fixed `0`/`1`.
    pub fn levels(&self) -> Option<&[String]> {
        match self {
            ColumnKind::Ordinal(levels) | ColumnKind::Categorical(levels) => Some(levels),
            _ => None,
        }
    }

    pub fn level_count(&self) -> Option<usize> {
        match self {
            ColumnKind::Binary => Some(2),
            ColumnKind::Ordinal(levels) | ColumnKind::Categorical(levels) => Some(levels.len()),
            ColumnKind::Continuous => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Binary => "binary",
            ColumnKind::Ordinal(_) => "ordinal",
            ColumnKind::Categorical(_) => "categorical",
        }
    }

    fn validate(&self, column: &str) -> Result<()> {
        if let Some(levels) = self.levels() {
            if levels.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "column `{column}` declares no levels"
                )));
            }
            for (i, level) in levels.iter().enumerate() {
                if levels[..i].contains(level) {
                    return Err(Error::InvalidSchema(format!(
                        "column `{column}` has duplicate level `{level}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered, uniquely named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<(String, ColumnKind)>,
}

impl Schema {
    pub fn new(columns: Vec<(String, ColumnKind)>) -> Result<Self> {
        for (i, (name, kind)) in columns.iter().enumerate() {
            if columns[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::InvalidSchema(format!("duplicate column `{name}`")));
            }
            kind.validate(name)?;
        }
        Ok(Schema { columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &ColumnKind)> {
        self.columns.iter().map(|(n, k)| (n.as_str(), k))
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.columns[index].0
    }

    pub fn kind(&self, index: usize) -> &ColumnKind {
        &self.columns[index].1
    }

    pub fn kind_of(&self, name: &str) -> Result<&ColumnKind> {
        Ok(self.kind(self.index(name)?))
    }

    /// Resolves a textual level to its storage index.
    pub fn level_index(&self, column: usize, label: &str) -> Result<usize> {
        let (name, kind) = &self.columns[column];
        match kind {
            ColumnKind::Binary => match label {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(Error::UnknownLevel {
                    column: name.clone(),
                    value: label.to_string(),
                }),
            },
            ColumnKind::Ordinal(levels) | ColumnKind::Categorical(levels) => levels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownLevel {
                    column: name.clone(),
                    value: label.to_string(),
                }),
            ColumnKind::Continuous => Err(Error::KindMismatch {
                column: name.clone(),
                expected: "discrete",
                actual: kind.to_string(),
            }),
        }
    }

    /// Level label for a storage index.
    pub fn level_label(&self, column: usize, level: usize) -> String {
        match self.kind(column) {
            ColumnKind::Binary => level.to_string(),
            ColumnKind::Ordinal(levels) | ColumnKind::Categorical(levels) => levels[level].clone(),
            ColumnKind::Continuous => unreachable!("continuous columns have no levels"),
        }
    }

    /// Returns a copy with one column relaxed to `Continuous` (used when a
    /// debiasing shift pushes a binary column off the {0,1} grid).
    pub fn with_continuous(&self, column: usize) -> Schema {
        let mut columns = self.columns.clone();
        columns[column].1 = ColumnKind::Continuous;
        Schema { columns }
    }
}

/// Immutable column-major table with no missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Table {
    /// Builds a table, validating column lengths, level ranges, binary values
    /// and finiteness of continuous entries.
    pub fn new(schema: Schema, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns of data for {} schema columns",
                columns.len(),
                schema.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (idx, column) in columns.iter().enumerate() {
            let name = schema.name(idx);
            if column.len() != n_rows {
                return Err(Error::SchemaMismatch(format!(
                    "column `{name}` has {} rows, expected {n_rows}",
                    column.len()
                )));
            }
            match schema.kind(idx) {
                ColumnKind::Continuous => {
                    if let Some(row) = column.iter().position(|v| !v.is_finite()) {
                        return Err(Error::InvalidValue {
                            column: name.to_string(),
                            row,
                            message: "non-finite value".to_string(),
                        });
                    }
                }
                kind => {
                    let n_levels = kind.level_count().unwrap() as f64;
                    if let Some(row) = column
                        .iter()
                        .position(|&v| v.fract() != 0.0 || v < 0.0 || v >= n_levels)
                    {
                        return Err(Error::InvalidValue {
                            column: name.to_string(),
                            row,
                            message: format!(
                                "{} is not a level index below {n_levels}",
                                column[row]
                            ),
                        });
                    }
                }
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = vec![Vec::new(); schema.len()];
        Table {
            schema,
            columns,
            n_rows: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[f64]> {
        Ok(self.column(self.schema.index(name)?))
    }

    pub fn value(&self, row: usize, column: usize) -> f64 {
        self.columns[column][row]
    }

    /// Arithmetic mean of a continuous or binary column.
    pub fn column_mean(&self, name: &str) -> Result<f64> {
        let idx = self.schema.index(name)?;
        let kind = self.schema.kind(idx);
        if !kind.is_numeric() {
            return Err(Error::KindMismatch {
                column: name.to_string(),
                expected: "continuous or binary",
                actual: kind.to_string(),
            });
        }
        if self.n_rows == 0 {
            return Err(Error::EmptyTable);
        }
        Ok(self.columns[idx].iter().sum::<f64>() / self.n_rows as f64)
    }

    /// Partitions rows by the levels of a discrete column. Every declared level
    /// gets an entry, possibly empty; row order is preserved within parts.
    pub fn split_by(&self, name: &str) -> Result<BTreeMap<usize, Table>> {
        let idx = self.schema.index(name)?;
        let kind = self.schema.kind(idx);
        let n_levels = kind.level_count().ok_or_else(|| Error::KindMismatch {
            column: name.to_string(),
            expected: "discrete",
            actual: kind.to_string(),
        })?;
        let mut row_sets: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
        for (row, &value) in self.columns[idx].iter().enumerate() {
            row_sets[value as usize].push(row);
        }
        Ok(row_sets
            .into_iter()
            .enumerate()
            .map(|(level, rows)| (level, self.take_rows(&rows)))
            .collect())
    }

    /// Rows satisfying every equality term of `condition`, order preserved.
    pub fn filter_rows(&self, condition: &Condition) -> Table {
        let rows: Vec<usize> = (0..self.n_rows)
            .filter(|&row| condition.matches(self, row))
            .collect();
        self.take_rows(&rows)
    }

    /// New table holding the given rows in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        Table {
            schema: self.schema.clone(),
            columns,
            n_rows: rows.len(),
        }
    }

    /// The level-index tuple of `row` over the given discrete columns.
    pub fn level_tuple(&self, row: usize, columns: &[usize]) -> Vec<usize> {
        columns
            .iter()
            .map(|&c| self.columns[c][row] as usize)
            .collect()
    }

    /// Distinct level tuples over the given discrete columns, sorted.
    pub fn distinct_level_tuples(&self, columns: &[usize]) -> Vec<Vec<usize>> {
        let mut seen: Vec<Vec<usize>> = Vec::new();
        for row in 0..self.n_rows {
            let key = self.level_tuple(row, columns);
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen.sort();
        seen
    }

    /// Replaces one column, relaxing its kind to `Continuous` if `relax` is set.
    /// Internal building block for the shift wrappers.
    pub(crate) fn with_column_replaced(&self, column: usize, values: Vec<f64>, relax: bool) -> Table {
        debug_assert_eq!(values.len(), self.n_rows);
        let schema = if relax {
            self.schema.with_continuous(column)
        } else {
            self.schema.clone()
        };
        let mut columns = self.columns.clone();
        columns[column] = values;
        Table {
            schema,
            columns,
            n_rows: self.n_rows,
        }
    }
}

/// Conjunction of equality conditions on discrete columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    terms: Vec<(usize, usize)>,
}

impl Condition {
    /// Builds a condition from `(column name, level label)` pairs.
    pub fn parse(schema: &Schema, terms: &[(&str, &str)]) -> Result<Condition> {
        let mut resolved = Vec::with_capacity(terms.len());
        for (name, label) in terms {
            let column = schema.index(name)?;
            let level = schema.level_index(column, label)?;
            resolved.push((column, level));
        }
        Ok(Condition { terms: resolved })
    }

    /// Builds a condition from `(column index, level index)` pairs, validating
    /// that the columns are discrete and the levels exist.
    pub fn from_levels(schema: &Schema, terms: &[(usize, usize)]) -> Result<Condition> {
        for &(column, level) in terms {
            let kind = schema.kind(column);
            match kind.level_count() {
                Some(n) if level < n => {}
                Some(_) => {
                    return Err(Error::UnknownLevel {
                        column: schema.name(column).to_string(),
                        value: level.to_string(),
                    })
                }
                None => {
                    return Err(Error::KindMismatch {
                        column: schema.name(column).to_string(),
                        expected: "discrete",
                        actual: kind.to_string(),
                    })
                }
            }
        }
        Ok(Condition {
            terms: terms.to_vec(),
        })
    }

    pub fn terms(&self) -> &[(usize, usize)] {
        &self.terms
    }

    pub fn matches(&self, table: &Table, row: usize) -> bool {
        self.terms
            .iter()
            .all(|&(column, level)| table.value(row, column) as usize == level)
    }

    /// Human-readable rendering, e.g. `stage=II & therapy=1`.
    pub fn describe(&self, schema: &Schema) -> String {
        self.terms
            .iter()
            .map(|&(column, level)| {
                format!("{}={}", schema.name(column), schema.level_label(column, level))
            })
            .collect::<Vec<_>>()
            .join(" & ")
    }
}
