use thiserror::Error;

/// Errors raised by the denoising engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A symmetric positive-definite solve failed or a design matrix is rank deficient.
    #[error("numerical conditioning failure in {context}: {detail}")]
    NumericalConditioning { context: String, detail: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error(
        "quadrature did not converge: error estimate {estimate:e} exceeds tolerance {tolerance:e}"
    )]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("pipeline worker for stage {stage} failed: {reason}")]
    WorkerFailed { stage: usize, reason: String },

    /// Internal invariant violated; never expected in a correct build.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
