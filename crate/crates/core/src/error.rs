use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("argument outside the domain of {func}: {value}")]
    Domain { func: &'static str, value: f64 },

    #[error("numeric guard: {0}")]
    Numeric(String),

    #[error("environment horizon of {horizon} steps exhausted")]
    Horizon { horizon: usize },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}
