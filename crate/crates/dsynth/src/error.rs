//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{column}` has kind {actual}, expected {expected}")]
    KindMismatch {
        column: String,
        expected: &'static str,
        actual: String,
    },

    #[error("table is empty")]
    EmptyTable,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("`{value}` is not a level of column `{column}`")]
    UnknownLevel { column: String, value: String },

    #[error("invalid value in column `{column}` at row {row}: {message}")]
    InvalidValue {
        column: String,
        row: usize,
        message: String,
    },

    #[error("no exposure variation within strata (denominator {denominator:.3e})")]
    DegenerateExposure { denominator: f64 },

    #[error("arm {arm} of column `{column}` is empty")]
    EmptyArm { column: String, arm: u8 },

    #[error("stratum {stratum} cannot be predicted from the training folds")]
    StratumUnestimable { stratum: String },

    #[error(
        "condition {condition} too rare: matched {matched} of {requested} rows after {drawn} draws"
    )]
    ConditionTooRare {
        condition: String,
        requested: usize,
        matched: usize,
        drawn: usize,
    },

    #[error("stratum {stratum} was not observed when the shift was calibrated")]
    UnseenStratum { stratum: String },

    #[error("generator does not support conditional sampling")]
    ConditionalUnsupported,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    ParseData {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
