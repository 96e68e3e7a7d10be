use thiserror::Error;

use crate::spd::SpdMatrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the domain of a matrix function (e.g. not SPD).
    #[error("domain error: {0}")]
    Domain(String),

    /// Karcher iteration hit its cap; `last` is the final iterate.
    #[error("Karcher mean did not converge after {iterations} iterations (gradient norm {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: Box<SpdMatrix>,
    },

    #[error("estimation error in equation {equation}: {reason}")]
    Estimation { equation: usize, reason: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("stability error: {0}")]
    Stability(String),

    #[error("ingestion error at line {line}, column {column}: {reason}")]
    Ingestion {
        line: usize,
        column: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
