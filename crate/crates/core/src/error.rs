use thiserror::Error;

/// Errors raised by the modelling, acquisition and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed even at the largest jitter level.
    #[error(
        "cholesky factorization of {size}x{size} covariance failed \
         (diagonal range [{min_diag:.3e}, {max_diag:.3e}], last jitter {jitter:.3e})"
    )]
    Factorization {
        size: usize,
        min_diag: f64,
        max_diag: f64,
        jitter: f64,
    },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("objective evaluation failed: {0}")]
    Evaluation(String),

    /// Unparseable identifier, grid specification or run record.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
