use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("metadata error in {path}: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("insufficient padding: need {needed} voxels of halo around {roi}, block is {block}")]
    InsufficientPadding {
        needed: usize,
        roi: String,
        block: String,
    },

    #[error("non-finite tensor component")]
    NonFinite,

    #[error("box mismatch: {0}")]
    BoxMismatch(String),

    #[error("dataset already exists: {0}")]
    Exists(PathBuf),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
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
