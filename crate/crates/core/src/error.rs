//! Crate-wide error type.
//!
//! [`Error::exit_code`] groups failures the way the CLI reports them:
//! exit 1 for configuration problems, exit 2 for data problems.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or config field is out of its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Filesystem trouble while reading or writing an artifact.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image bytes that could not be decoded into pixels.
    #[error("image error: {0}")]
    Image(String),

    /// Input data violates an operation's preconditions.
    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// CLI exit status: 0 is success, 1 config error, 2 data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
