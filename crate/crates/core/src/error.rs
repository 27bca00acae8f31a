use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad data in {path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("invalid state: {0}")]
    State(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("incompatible {what}: found version {found}, expected {expected}")]
    Incompatible {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("integrity check failed for {path}: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error("training aborted at iteration {iteration}: {reason} (last good checkpoint: {last_checkpoint})")]
    Aborted {
        iteration: u64,
        reason: String,
        last_checkpoint: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl Error {
    /// Process exit status: 2 usage/config, 3 runtime abort, 4 compatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Io { .. } | Error::Data { .. } => 2,
            Error::State(_) | Error::Numerical(_) | Error::Aborted { .. } => 3,
            Error::Incompatible { .. } | Error::Integrity { .. } => 4,
        }
    }
}
