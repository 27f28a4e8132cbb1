use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] sstfill_core::Error),

    #[error(transparent)]
    Nn(#[from] sstfill_nn::Error),

    #[error(transparent)]
    Train(#[from] sstfill_train::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad arguments or configuration, 3 for bad or missing data.
    pub fn exit_code(&self) -> i32 {
        let data = match self {
            CliError::Usage(_) | CliError::Parse { .. } => false,
            CliError::Core(e) => e.is_data_error(),
            CliError::Nn(e) => !matches!(e, sstfill_nn::Error::Config(_)),
            CliError::Train(e) => e.is_data_error(),
            CliError::Io { .. } | CliError::Csv(_) => true,
        };
        if data {
            3
        } else {
            2
        }
    }
}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}
