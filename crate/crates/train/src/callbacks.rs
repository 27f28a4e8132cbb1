//! Epoch-end callbacks driven by the validation loss.

use std::path::PathBuf;

use sstfill_core::Generator;

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns true when training should stop.
    pub fn update(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.wait >= self.patience
    }
}

/// Halves the learning rate after `patience` stagnant epochs, never going
/// below `min_lr`.
#[derive(Clone, Debug)]
pub struct ReduceLrOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    best: f64,
    wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(patience: usize, min_lr: f64) -> Self {
        ReduceLrOnPlateau {
            patience,
            factor: 0.5,
            min_lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// The learning rate to use from the next epoch on.
    pub fn update(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Tracks the best validation loss; the trainer keeps those weights and, when
/// a directory is set, writes them as a checkpoint.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub dir: Option<PathBuf>,
    best: f64,
}

impl ModelCheckpoint {
    pub fn new(dir: Option<PathBuf>) -> Self {
        ModelCheckpoint {
            dir,
            best: f64::INFINITY,
        }
    }

    pub fn improved(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Periodic diff-mask RMSE on a fixed test generator, for monitoring only.
/// An embedded-crop generator gives the sub-region variant.
#[derive(Clone)]
pub struct TestCallback {
    pub name: String,
    pub generator: Generator,
    pub interval: usize,
    pub n_batches: usize,
    pub batch_size: usize,
}

impl TestCallback {
    pub fn due(&self, epoch: usize) -> bool {
        self.interval > 0 && epoch % self.interval == 0
    }
}
