use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    /// Epochs between runs of the RMSE test callbacks.
    pub eval_interval: usize,
    /// Fixed validation set size, in batches.
    pub val_batches: usize,
    pub weight_decay: f64,
    /// Bounded queue length between the sample producer and the optimizer.
    pub prefetch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            steps_per_epoch: 200,
            batch_size: 32,
            lr0: 1e-4,
            lr_min: 1e-5,
            plateau_patience: 10,
            early_stop_patience: 10,
            eval_interval: 10,
            val_batches: 8,
            weight_decay: 1e-4,
            prefetch: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_min < self.lr0) || !(self.lr_min > 0.0) {
            return bad("require 0 < lr_min < lr0");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be at least 1");
        }
        if self.max_epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("max_epochs, steps_per_epoch and batch_size must be positive");
        }
        if self.eval_interval == 0 || self.val_batches == 0 || self.prefetch == 0 {
            return bad("eval_interval, val_batches and prefetch must be positive");
        }
        Ok(())
    }
}
