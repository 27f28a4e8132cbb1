use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sstfill_core::Error),

    #[error(transparent)]
    Nn(#[from] sstfill_nn::Error),

    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, value: f64 },

    #[error("sample producer stopped before the epoch finished")]
    GeneratorExhausted,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure comes from the data rather than the arguments.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Core(e) => e.is_data_error(),
            Error::Config(_) => false,
            Error::Nn(sstfill_nn::Error::Config(_)) => false,
            _ => true,
        }
    }
}
