use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset failed validation with {0} error(s)")]
    InvalidDataset(usize),
    #[error("no events survive filtering")]
    EmptyResult,
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dataset has no contributions")]
    NoContributions,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("parameter sets have different index structure: {0}")]
    IndexMismatch(String),
    #[error("no comparable pairs in the test set")]
    NoPairs,
    #[error("design cache: {0}")]
    Cache(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
