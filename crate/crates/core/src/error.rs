use thiserror::Error;

/// Errors raised by the model-building and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("segment {index}: invalid duration {duration}")]
    Duration { index: usize, duration: f64 },

    #[error("stage {stage}: matrix is not positive definite")]
    NotPositiveDefinite { stage: usize },

    #[error("instance field `{field}`: {message}")]
    Instance { field: String, message: String },

    #[error("basis table: {0}")]
    Basis(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
