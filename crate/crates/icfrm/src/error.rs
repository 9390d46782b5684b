use thiserror::Error;

/// Errors produced by model construction, test statistics and the bootstrap
/// engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("hypothesis is not estimable for this design")]
    NotEstimable,

    #[error("degrees of freedom must be positive: n = {n}, rank = {rank}")]
    DegreesOfFreedom { n: usize, rank: usize },

    #[error("middle matrix C (X'X)^+ C' is singular or not positive definite")]
    SingularMiddleMatrix,

    #[error("estimated variance is degenerate (gamma_hat(t,t) <= 0) at grid index {0}")]
    DegenerateVariance(usize),

    #[error("scale function vanishes (|h| < 1e-12) at grid index {0}")]
    InvalidScale(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
