//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty pattern set at expansion level {level}")]
    EmptyPatternSet { level: usize },

    #[error("expansion error: {0}")]
    Expansion(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite data in {context}")]
    NonFiniteData { context: &'static str },

    #[error("load errors:\n{}", .0.join("\n"))]
    LoadErrors(Vec<String>),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
