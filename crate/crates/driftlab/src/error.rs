use thiserror::Error;

/// Unified error type for the whole crate.
///
/// Internal invariant violations (frozen parameter mutated, tape shape
/// bookkeeping broken) are panics, not variants: they indicate bugs, not
/// conditions a caller can handle.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched shapes/arguments at an API boundary.
    #[error("config: {0}")]
    Config(String),

    /// Unknown or out-of-range condition token.
    #[error("token: {0}")]
    Token(String),

    /// Non-finite values or a numerically unusable input (names the offender).
    #[error("numerics: {0}")]
    Numerics(String),

    /// An iterative solver ran out of budget; carries the last residual.
    #[error("convergence: {0}")]
    Convergence(String),

    /// Input that is structurally valid but carries no usable signal.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A required upstream artifact (stage output, checkpoint) is missing.
    #[error("dependency: {0}")]
    Dependency(String),

    /// Malformed serialized artifact (checkpoint, manifest).
    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }
}
