//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("coincident particles at indices {i} and {j}")]
    CoincidentParticles { i: usize, j: usize },

    #[error("steepest descent undefined: {0}")]
    SteepestDescentUndefined(String),

    #[error("root finding failed to converge: {0}")]
    NoConvergence(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation failed:\n{0}")]
    Validation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("at flow time t={time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the flow time at which it occurred.
    pub fn at_time(self, time: f64) -> Error {
        Error::AtTime {
            time,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
