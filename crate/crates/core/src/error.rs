use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the resolution adaptation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sample out of range: {0}")]
    Range(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("weight file error in layer `{layer}`: {message}")]
    Weights { layer: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("command `{command}` failed ({status}): {output}")]
    Subprocess {
        command: String,
        status: String,
        output: String,
    },

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn weights(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Weights {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
