use std::path::PathBuf;

use crate::env::EnvError;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("resource budget exceeded: {0}")]
    Budget(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl From<crate::accel::AccelError> for Error {
    fn from(e: crate::accel::AccelError) -> Self {
        Error::Config(e.to_string())
    }
}

impl Error {
    pub fn config(reason: impl Into<String>) -> Self {
        Error::Config(reason.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format { path: path.into(), reason: reason.to_string() }
    }

    /// Process exit status for the command-line tool: 2 for bad
    /// configuration, 3 for numerical blow-up, 4 for budget violations and 1
    /// for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } | Error::Env(EnvError::Unknown(_)) => 2,
            Error::Tensor(e) if e.is_non_finite() => 3,
            Error::Budget(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
