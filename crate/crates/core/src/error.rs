use thiserror::Error;

use crate::dataio::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid compressor: {0}")]
    InvalidCompressor(String),

    /// A compressor was asked for a class parameter it does not declare, or
    /// was wired into a slot that needs the other class.
    #[error("compressor class misuse: {0}")]
    ClassMisuse(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid theory input: {0}")]
    Theory(String),

    #[error("run diverged at round {round}: {reason}")]
    Diverged { round: usize, reason: String },

    #[error("invariant violated at round {round}: {invariant}")]
    InvariantViolation { round: usize, invariant: String },

    #[error("reference solution unavailable: {0}")]
    MissingReference(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
