//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input series do not live on a common timestamp grid.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A value violates its domain (nonpositive price, correlation out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A series or window has zero variance and cannot be normalized.
    #[error("degenerate series for asset {asset}: {detail}")]
    DegenerateSeries { asset: String, detail: String },

    /// A precondition on an operation's input was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Matrix factorization failed (not positive definite, singular, ...).
    #[error("decomposition error: {0}")]
    Decomposition(String),

    /// Numerical integration did not reach the requested tolerance.
    #[error("quadrature did not converge: achieved {achieved:e}, target {target:e}")]
    Quadrature { achieved: f64, target: f64 },

    /// Invalid argument to an operation.
    #[error("argument error: {0}")]
    Argument(String),

    /// Malformed input data.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn decomposition(msg: impl Into<String>) -> Self {
        Error::Decomposition(msg.into())
    }
}
