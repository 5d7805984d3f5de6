use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the retrieval and planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in slot `{slot}`: {message}")]
    Schema { slot: String, message: String },

    #[error("format error at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("index build failed: {0}")]
    Build(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("could not parse refinement: {0}")]
    Parse(String),

    #[error("planner failure: {0}")]
    Planner(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(slot: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            slot: slot.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::Dimension { expected, actual }
    }
}
