use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("source at ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("intensity at pixel {index} is {value}, expected a finite nonnegative mean")]
    InvalidIntensity { index: usize, value: f64 },
    #[error("point set is empty")]
    EmptySet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called before any forward pass was recorded")]
    NoForward,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("no crop containing a source found after {0} attempts")]
    NoSourceCrop(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
