use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument {value} outside the domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("base model evaluation failed at row {row}: {reason}")]
    RowEvaluation { row: usize, reason: String },

    #[error("cannot fit map: {0}")]
    DegenerateData(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("quantile bracket could not be expanded to contain tau = {tau}")]
    BracketFailure { tau: f64 },

    #[error("quadrature did not converge on [{lower}, {upper}]")]
    Quadrature { lower: f64, upper: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
