use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit. Each variant maps onto one CLI exit class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("{path}:{line}: {detail}")]
    Record {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("missing artifact {artifact}: {hint}")]
    MissingArtifact { artifact: String, hint: String },

    #[error("remote provider: {0}")]
    Remote(String),
}

/// Exit class of an error, used by the CLI to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Io,
    DependencyMissing,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn missing(artifact: impl Into<String>, hint: impl Into<String>) -> Self {
        Error::MissingArtifact {
            artifact: artifact.into(),
            hint: hint.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Validation(_) | Error::Record { .. } => ErrorClass::Validation,
            Error::Io { .. } | Error::Remote(_) => ErrorClass::Io,
            Error::MissingArtifact { .. } => ErrorClass::DependencyMissing,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
