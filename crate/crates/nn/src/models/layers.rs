//! Parameterized building blocks shared by the architectures.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, RunningStats, Var};
use crate::kernels::Pad;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: usize,
    pub b: Option<usize>,
    pub stride: usize,
    pub pad: Pad,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: Pad,
        bias: bool,
    ) -> Self {
        let fan_in = (k * k * cin) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[k, k, cin, cout], bound, rng),
            true,
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[cout]), true));
        Conv { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let mut y = g.conv2d(x, w, self.stride, self.pad)?;
        if let Some(b) = self.b {
            let b = g.param(store, b);
            y = g.add_bias(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        let bound = (1.0 / din as f32).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::uniform(&[din, dout], bound, rng), true);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[dout]), true);
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.linear(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running: RunningStats,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            running: RunningStats {
                mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
                var: store.add(format!("{name}.running_var"), Tensor::full(&[c], 1.0), false),
            },
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batchnorm(x, gamma, beta, self.running, store, train)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layernorm(x, gamma, beta)
    }
}

/// conv-BN-ReLU-conv-BN plus shortcut, then ReLU. The shortcut is a strided
/// 1x1 projection when the stride or channel count changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub proj: Option<Conv>,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv::new(store, rng, &format!("{name}.conv1"), 3, cin, cout, stride, Pad::Same, false);
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), cout);
        let conv2 = Conv::new(store, rng, &format!("{name}.conv2"), 3, cout, cout, 1, Pad::Same, false);
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), cout);
        let proj = (cin != cout || stride != 1)
            .then(|| Conv::new(store, rng, &format!("{name}.proj"), 1, cin, cout, stride, Pad::Same, true));
        ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.bn1.forward(g, store, h, train)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        let h = self.bn2.forward(g, store, h, train)?;
        let sc = match &self.proj {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        let y = g.add(h, sc)?;
        Ok(g.relu(y))
    }
}

/// Multi-head self-attention: packed QKV projection, scaled dot-product
/// attention per head, output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), d, 3 * d),
            proj: Linear::new(store, rng, &format!("{name}.proj"), d, d),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let qkv = self.qkv.forward(g, store, x)?;
        let a = g.attention(qkv, self.heads)?;
        self.proj.forward(g, store, a)
    }
}

/// Pre-norm transformer encoder block with a GELU MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, mlp_ratio * d),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), mlp_ratio * d, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let h = self.attn.forward(g, store, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, store, x)?;
        let h = self.fc1.forward(g, store, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, store, h)?;
        g.add(x, h)
    }
}
