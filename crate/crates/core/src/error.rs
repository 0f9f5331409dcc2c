use std::io;

use thiserror::Error;

/// Errors produced anywhere in the stereo pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or missing configuration inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched or otherwise unusable input data.
    #[error("input error: {0}")]
    Input(String),

    /// A numeric argument outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Disparity that moves the match target outside the right image.
    #[error("disparity {disparity} out of range at pixel ({x}, {y})")]
    OutOfRange { x: usize, y: usize, disparity: i64 },

    /// Malformed file contents.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A metric reduction had nothing to reduce over.
    #[error("no valid ground-truth pixels to evaluate")]
    EmptyReport,

    /// The requested operation needs a feature that is switched off.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
