use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A TextGrid (or other text resource) could not be parsed.
    #[error("{path}:{line}: {message}{}", tier.as_ref().map(|t| format!(" (tier \"{t}\")")).unwrap_or_default())]
    Parse {
        path: String,
        line: usize,
        tier: Option<String>,
        message: String,
    },

    /// Inputs violate a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// On-disk container does not match its manifest or header.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A numerical procedure failed (separation, singular system, no convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }

    /// True for errors that stem from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
