//! Per-epoch training record.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect after this epoch's callbacks.
    pub lr: f64,
    pub checkpoint: bool,
    /// Test-callback RMSE by callback name, for epochs where it ran.
    pub tests: BTreeMap<String, f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn push(&mut self, rec: EpochRecord) {
        debug_assert!(self.epochs.last().is_none_or(|r| r.epoch < rec.epoch && r.lr >= rec.lr));
        self.epochs.push(rec);
    }

    pub fn losses(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|r| (r.train_loss, r.val_loss)).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
    }

    fn test_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.epochs.iter().flat_map(|r| r.tests.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// Deterministic CSV: no wall-clock columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let names = self.test_names();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch", "train_loss", "val_loss", "lr", "checkpoint"];
        header.extend(names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.epochs {
            let mut row = vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
                (r.checkpoint as u8).to_string(),
            ];
            row.extend(names.iter().map(|n| r.tests.get(n).map_or(String::new(), f64::to_string)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| crate::error::Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "wall_secs"])?;
        for r in &self.epochs {
            w.write_record([r.epoch.to_string(), format!("{:.3}", r.wall_secs)])?;
        }
        w.flush().map_err(|e| crate::error::Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val: f64, test: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0 / epoch as f64,
            val_loss: val,
            lr: 1e-4,
            checkpoint: epoch == 1,
            tests: test.map(|t| [("test".to_string(), t)].into()).unwrap_or_default(),
            wall_secs: 0.1 * epoch as f64,
        }
    }

    #[test]
    fn csv_has_no_timing_and_blank_missing_tests() {
        let mut log = TrainLog::default();
        log.push(rec(1, 0.5, None));
        log.push(rec(2, 0.25, Some(0.3)));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epoch,train_loss,val_loss,lr,checkpoint,test\n1,1,0.5,0.0001,1,\n2,0.5,0.25,0.0001,0,0.3\n"
        );
        assert_eq!(log.best().unwrap().epoch, 2);
    }
}
