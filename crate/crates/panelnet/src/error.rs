//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by panel construction, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent inputs (schema violations, dimension
    /// mismatches, empty datasets).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A malformed record in a tabular input, with its 1-based line number.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Numerical failure (rank deficiency, non-convergence, overflow).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            csv::ErrorKind::Deserialize { err, .. } => Error::Parse {
                line,
                message: err.to_string(),
            },
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
                line,
                message: format!("expected {expected_len} fields, found {len}"),
            },
            kind => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
