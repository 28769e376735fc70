use std::path::PathBuf;

use thiserror::Error;

/// Which tail of a marginal a GP fit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Left,
    Right,
}

impl std::fmt::Display for TailSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TailSide::Left => f.write_str("left"),
            TailSide::Right => f.write_str("right"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient {side} tail data: {count} points, need at least {min}")]
    InsufficientTail {
        side: TailSide,
        count: usize,
        min: usize,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined coefficient: {0}")]
    Undefined(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unsupported model version {found:?} (expected {expected:?})")]
    Version { found: String, expected: &'static str },

    #[error("column {column}: {source}")]
    Column {
        column: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through `Column` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Column { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
