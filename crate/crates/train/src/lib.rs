//! Training, evaluation and baselines for gap reconstruction.

pub mod baselines;
pub mod batch;
pub mod callbacks;
pub mod config;
pub mod error;
pub mod eval;
pub mod fit;
pub mod log;

pub use batch::{masked_mse, Batch};
pub use config::TrainConfig;
pub use error::{Error, Result};
pub use eval::{evaluate_many, evaluate_rmse, EvalReport, ModelPredictor, OraclePredictor, Predictor};
pub use fit::{fit, FitOptions, FitOutcome};
pub use log::{EpochRecord, TrainLog};
