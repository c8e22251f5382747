use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RamError>;

#[derive(Debug, Error)]
pub enum RamError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed idx file {path}: {msg}")]
    IdxFormat { path: PathBuf, msg: String },
    #[error("dataset inconsistency: {0}")]
    Consistency(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("metrics validation failed: {0}")]
    Validation(String),
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl RamError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RamError::Io {
            path: path.into(),
            source,
        }
    }
}
