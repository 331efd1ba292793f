use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("sequence of {len} tokens exceeds max length {max}")]
    TooLong { len: usize, max: usize },

    #[error("no definition found for `{0}`")]
    NotFound(String),

    #[error("backend `{0}` is not trainable")]
    NotTrainable(String),

    #[error("backend not loaded: {0}")]
    NotLoaded(String),

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: usize, diagnostics: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
