//! Error types shared across the crate.

/// Crate-wide error type. The CLI maps `Validation`/`Guard` to exit code 2
/// and `Invariant` to exit code 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input (bad edge list, parameter out of range, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// A desk-scale size guard was violated (the request is well-formed but
    /// would require infeasible enumeration).
    #[error("size guard: {0}")]
    Guard(String),
    /// An internal invariant failed; this indicates a bug, not bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

pub fn guard<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Guard(msg.into()))
}
