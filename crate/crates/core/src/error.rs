use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("label value {value} at index {index} not in {{0,1,255}}")]
    InvalidLabel { index: usize, value: u8 },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("invalid box ({x0},{y0},{x1},{y1}) for a {width}x{height} frame")]
    InvalidBox {
        x0: i64,
        y0: i64,
        x1: i64,
        y1: i64,
        width: usize,
        height: usize,
    },

    #[error("confidence {0} outside [0,1]")]
    InvalidConfidence(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("placement escapes frame: {0}")]
    Placement(String),

    #[error("undefined {0}")]
    Undefined(&'static str),

    #[error("{0}")]
    Input(String),

    #[error("{}: {source}", path.display())]
    Context {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

    /// Attaches the file being processed to an error that has none.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Format { .. } | Error::Context { .. }) => e,
            other => Error::Context {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }
}
