use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot:.3e} below tolerance {tol:.3e} at index {index})")]
    NotPositiveDefinite { pivot: f64, tol: f64, index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite values encountered in {context} at iteration {iteration}")]
    NonFinite { context: String, iteration: usize },

    #[error("unsupported constraint: {0}")]
    UnsupportedConstraint(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("all initializations diverged")]
    AllInitsDiverged,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
