use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PotsError>;

#[derive(Debug, Error)]
pub enum PotsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corruption: {0}")]
    Corruption(String),
    #[error("storage error on {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PotsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PotsError::InvalidInput(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: io::Error) -> Self {
        PotsError::Storage {
            path: path.into(),
            source,
        }
    }
}
