use thiserror::Error;

use crate::sequence::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Step size violates the stability bound `dt * (|H| + rates) < 0.1`.
    #[error("stability error: dt = {dt:e} s gives dt*(|H| + rates) = {product:.3} (must be < 0.1)")]
    Stability { dt: f64, product: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("no cooling: heating rate A+ = {a_plus:e}/s is not below cooling rate A- = {a_minus:e}/s")]
    NoCooling { a_plus: f64, a_minus: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("compile error: {0}")]
    Compile(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }
}
