use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error on row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("ordering ambiguity for student `{student}`, kc `{kc}`: {reason}")]
    OrderingAmbiguity {
        student: String,
        kc: String,
        reason: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unknown {kind} `{id}`")]
    UnknownEntity { kind: &'static str, id: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fit did not converge after {iterations} iterations (max |gradient| {gradient_max_abs:.3e})")]
    NotConverged {
        iterations: usize,
        gradient_max_abs: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
