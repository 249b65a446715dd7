//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input line, reported with its 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Event ids that could not be resolved against the course schema.
    #[error("schema mismatch: unknown raw ids [{}]", ids.join(", "))]
    SchemaMismatch { ids: Vec<String> },

    #[error("duplicate student id {0:?}")]
    DuplicateStudent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("encoding error: {0}")]
    Encode(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values or other numeric failure states.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A metric whose value is not defined for the given inputs
    /// (single-class AUC, ill-conditioned recovery-rate denominator).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
