use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(String),

    /// A binary or text file does not follow its declared layout.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    /// Dimensions of two operands (or a file and its expected topology) disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// A computation produced NaN/inf or hit a degenerate numeric case.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    /// Process exit code for the command-line front end: 3 for numeric
    /// failures, 2 for everything else (validation, malformed input, I/O).
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
