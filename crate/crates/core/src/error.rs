//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation
    /// (non-finite angle, Bezier parameter outside [0, 1], ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is inconsistent (empty layer list, inverted
    /// action bounds, zero horizon, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    Empty(String),

    /// A Bezier curve with a vanishing derivative has no tangent heading.
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
