use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("power iteration did not converge after {iters} iterations (last estimate {estimate})")]
    NotConverged { iters: usize, estimate: f64 },

    #[error("matrix is not positive semidefinite (pivot {pivot} at index {index})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("training diverged at step {step}")]
    Diverged { step: u64 },

    #[error("overflow in {layer} at step {step}")]
    Overflow { layer: String, step: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
