use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no sea cells")]
    NoSeaCells,

    #[error("no valid cells")]
    NoValidCells,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no qualifying base day: {0}")]
    NoQualifyingDay(String),

    #[error("mask composition retries exhausted after {0} attempts")]
    RetriesExhausted(usize),

    #[error("climatology gap filling did not converge: {0} sea cells still missing")]
    GapFillIncomplete(usize),

    #[error("malformed SGR1 data: {0}")]
    Format(String),

    #[error("hash mismatch for {path}: manifest {expected}, file {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by bad or inconsistent input data rather than
    /// bad arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_) | Error::ShapeMismatch { .. })
    }
}
