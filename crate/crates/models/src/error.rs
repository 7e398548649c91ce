use std::io;
use std::path::PathBuf;

use pots_core::PotsError;
use pots_tensor::TensorError;
use thiserror::Error;

use crate::api::{ModelKind, Task};

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] PotsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model kind {kind} does not support the {task} task")]
    UnsupportedTask { kind: ModelKind, task: Task },
    /// Epoch and batch are 1-indexed.
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },
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

impl ModelError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ModelError::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        ModelError::Format(msg.into())
    }
}
