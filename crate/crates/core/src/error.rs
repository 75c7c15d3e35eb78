use thiserror::Error;

use crate::path::SolutionPath;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("missing values in rows {rows:?}")]
    MissingValues { rows: Vec<usize> },

    #[error("row {row}: value {value:?} in column {column:?} has no declared encoding")]
    Encoding {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset needs at least {required} rows, got {found}")]
    TooFewRows { required: usize, found: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("feature column {0:?} has zero variance")]
    DegenerateFeature(String),

    #[error("group z={0} has no members")]
    GroupMissing(u8),

    #[error("label {0:+} has no members")]
    LabelMissing(i8),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver stopped after {iterations} iterations with KKT violation {violation:e}")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("offset is indeterminate: {0}")]
    OffsetIndeterminate(String),

    #[error("shadow price undefined: bias vector u is zero, the fairness constraint is vacuous")]
    UndefinedPrice,

    #[error("solver state error: {0}")]
    State(String),

    #[error("degenerate slope system: {0}")]
    PathDegenerate(String),

    #[error("path incomplete after {events} events at eps = {eps}")]
    PathIncomplete {
        events: usize,
        eps: f64,
        partial: Box<SolutionPath>,
    },

    #[error("marginal utility {value} at index {index} is not strictly positive")]
    MonotonicityViolation { index: usize, value: f64 },

    #[error("point cloud is degenerate: {0}")]
    Degeneracy(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. }
            | Error::OffsetIndeterminate(_)
            | Error::UndefinedPrice
            | Error::State(_)
            | Error::PathDegenerate(_)
            | Error::NumericalDegeneracy(_)
            | Error::Degeneracy(_) => 3,
            Error::PathIncomplete { .. } => 4,
            _ => 2,
        }
    }
}
