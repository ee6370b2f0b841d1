use thiserror::Error;

/// Errors raised by the design, inference and pipeline routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("degenerate source: every source eigenvalue is zero")]
    DegenerateSource,

    #[error("degenerate measurement row: row has zero norm")]
    DegenerateRow,

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

