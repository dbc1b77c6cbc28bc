//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid matrix/image/tensor geometry (zero sizes, non-divisible targets, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter outside its documented range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Shape inference or layer wiring failed; names the offending layer.
    #[error("shape error at {layer}: {detail}")]
    Shape { layer: String, detail: String },

    /// A runtime contract was violated (e.g. batchnorm on a batch of 1).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed file content (PGM/DRNF/DRNW headers, manifest JSON).
    #[error("format error: {0}")]
    Format(String),

    /// Metric computation over degenerate input (e.g. single-class ROC labels).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
