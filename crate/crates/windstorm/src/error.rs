use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: format error at byte {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    Content { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] windstorm_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), offset, msg: msg.into() }
    }

    pub fn content(path: &Path, msg: impl Into<String>) -> Self {
        Error::Content { path: path.to_path_buf(), msg: msg.into() }
    }

    /// Process exit code: 1 usage or configuration, 2 input files, 3 fitting
    /// or simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Format { .. } | Error::Content { .. } => 2,
            Error::Model(_) => 3,
        }
    }
}
