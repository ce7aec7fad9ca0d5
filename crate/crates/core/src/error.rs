use std::path::PathBuf;

use thiserror::Error;

use crate::learners::TrainedModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("group `{0}` is absent or empty")]
    EmptyGroup(String),

    #[error("disparate impact undefined: neither group has a positive outcome")]
    UndefinedDisparateImpact,

    #[error("class `{0}` absent; class-conditional rate undefined")]
    MissingClass(&'static str),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("solver did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<TrainedModel>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
