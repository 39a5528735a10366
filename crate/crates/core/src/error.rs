use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mining, training and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments, shapes, or configuration.
    #[error("usage error: {0}")]
    Usage(String),

    /// A binary file whose header or payload does not match the expected layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A CSV file that violates its schema or the invariants of the type it encodes.
    #[error("format error at line {line}: {message}")]
    Csv { line: u64, message: String },

    /// Non-finite loss, gradient, or parameter encountered during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
