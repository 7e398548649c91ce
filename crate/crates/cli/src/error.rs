use std::fmt::Display;
use std::path::Path;

use pots_core::PotsError;
use pots_models::ModelError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or task/model combinations. Exit 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent files. Exit 2.
    #[error("{0}")]
    Data(String),
    /// Non-finite training loss. Exit 3.
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub(crate) fn data(path: &Path, e: impl Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub(crate) fn core(path: &Path, e: PotsError) -> Self {
        Self::data(path, e)
    }

    /// `context` names the file or flag the failure relates to.
    pub(crate) fn model(context: &str, e: ModelError) -> Self {
        match e {
            ModelError::UnsupportedTask { .. } => CliError::Usage(format!("{context}: {e}")),
            ModelError::Diverged { .. } => CliError::Diverged(format!("{context}: {e}")),
            other => CliError::Data(format!("{context}: {other}")),
        }
    }
}
