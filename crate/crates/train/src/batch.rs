//! Samples to network tensors.

use sstfill_core::Sample;
use sstfill_nn::Tensor;

use crate::error::{Error, Result};

/// Stacked inputs plus the target and loss mask of the current day.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub target: Vec<f32>,
    /// 1 on every real-valid sea cell of the current day.
    pub mask: Vec<f32>,
    pub diff: Vec<f32>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Batch> {
        let first = samples.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let (h, w, cx) = (first.h, first.w, first.cx());
        let n = h * w;
        let mut x = Vec::with_capacity(samples.len() * n * cx);
        let mut target = Vec::with_capacity(samples.len() * n);
        let mut mask = Vec::with_capacity(samples.len() * n);
        let mut diff = Vec::with_capacity(samples.len() * n);
        for s in samples {
            if (s.h, s.w, s.cx()) != (h, w, cx) {
                return Err(Error::Config("samples in a batch differ in shape".into()));
            }
            x.extend_from_slice(&s.x);
            for c in s.y.chunks_exact(3) {
                target.push(c[0]);
                mask.push(c[1]);
                diff.push(c[2]);
            }
        }
        Ok(Batch {
            x: Tensor::new(&[samples.len(), h, w, cx], x)?,
            target,
            mask,
            diff,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean squared error over the cells where `mask` is set.
pub fn masked_mse(pred: &[f32], truth: &[f32], mask: &[f32]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Config(format!(
            "masked_mse lengths differ: {} / {} / {}",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let (mut sse, mut n) = (0.0f64, 0usize);
    for i in 0..pred.len() {
        if mask[i] > 0.5 {
            let d = pred[i] as f64 - truth[i] as f64;
            sse += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(sstfill_nn::Error::EmptyMask.into());
    }
    Ok(sse / n as f64)
}
