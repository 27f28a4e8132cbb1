//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Result<Self> {
        if !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::Config(format!("invalid AdamW settings {cfg:?}")));
        }
        let zeros = |e: &crate::params::ParamEntry| {
            if e.trainable {
                vec![0.0; e.value.len()]
            } else {
                Vec::new()
            }
        };
        Ok(AdamW {
            cfg,
            step: 0,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update: `p -= lr·(m̂/(√v̂+ε) + wd·p)`. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f32>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "adamw",
                format!("{} gradients for {} tensors", grads.len(), store.len()),
            ));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for id in 0..store.len() {
            if !store.entry(id).trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = store.value_mut(id).data_mut();
            let g = grads[id].as_deref();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                let upd = mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p[i] as f64;
                p[i] = (p[i] as f64 - c.lr * upd) as f32;
            }
        }
        Ok(())
    }
}
