//! Error type shared by all numerical components.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/operator shapes do not compose.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An argument is outside its documented domain (labels, step sizes, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// An iterative method hit non-finite values or lost positive curvature.
    #[error("numerical breakdown at iteration {iter}: {context}")]
    Numerical { context: String, iter: usize },

    /// A symmetric factorization found a non-positive pivot.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// A cached structure no longer matches the network it was built from.
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
}
