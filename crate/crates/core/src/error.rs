//! Error type shared by every module of the simulator.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model architecture, attack parameters or experiment settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A dataset is empty or otherwise unusable for the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// A dataset or checkpoint file could not be decoded.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// The request cannot be satisfied for the given sizes (e.g. more clients than samples).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Model training could not proceed.
    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
