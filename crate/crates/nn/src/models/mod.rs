//! U-Net and ViT reconstructors.

pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::Pad;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use layers::{Conv, LayerNorm, ResidualBlock, TransformerBlock};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_size: usize,
}

impl UNetConfig {
    pub fn new(channels: &[usize], s_days: usize, input_size: usize) -> Self {
        UNetConfig {
            channels: channels.to_vec(),
            blocks_per_stage: 2,
            in_channels: 2 * s_days + 1,
            out_channels: 1,
            input_size,
        }
    }

    pub fn unet32(s_days: usize, input_size: usize) -> Self {
        Self::new(&[32, 64, 128, 256], s_days, input_size)
    }

    pub fn unet64(s_days: usize, input_size: usize) -> Self {
        Self::new(&[64, 128, 256, 512], s_days, input_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::Config("U-Net needs at least two non-empty stages".into()));
        }
        if self.blocks_per_stage == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("U-Net block and channel counts must be positive".into()));
        }
        let f = 1usize << (self.channels.len() - 1);
        if self.input_size == 0 || self.input_size % f != 0 {
            return Err(Error::Config(format!(
                "input size {} not divisible by {f}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub tail_upsamples: usize,
    pub mlp_ratio: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_size: usize,
}

impl ViTConfig {
    pub fn new(s_days: usize, input_size: usize) -> Self {
        ViTConfig {
            patch: 8,
            embed_dim: 256,
            depth: 6,
            heads: 8,
            tail_upsamples: 3,
            mlp_ratio: 4,
            in_channels: 2 * s_days + 1,
            out_channels: 1,
            input_size,
        }
    }

    pub fn tokens(&self) -> usize {
        (self.input_size / self.patch).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.input_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "input size {} not divisible by patch {}",
                self.input_size, self.patch
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if 1usize << self.tail_upsamples != self.patch {
            return Err(Error::Config(format!(
                "{} tail upsamples cannot undo patch size {}",
                self.tail_upsamples, self.patch
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("ViT channel counts must be positive".into()));
        }
        Ok(())
    }

    fn tail_channels(&self) -> Vec<usize> {
        let mut c = vec![self.embed_dim];
        for _ in 0..self.tail_upsamples {
            let last = *c.last().unwrap();
            c.push((last / 2).max(8));
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Unet(UNetConfig),
    Vit(ViTConfig),
    /// Parameter-free stand-in that the evaluation harness answers with the
    /// ground truth.
    Oracle { in_channels: usize, input_size: usize },
}

impl ModelConfig {
    pub fn in_channels(&self) -> usize {
        match self {
            ModelConfig::Unet(c) => c.in_channels,
            ModelConfig::Vit(c) => c.in_channels,
            ModelConfig::Oracle { in_channels, .. } => *in_channels,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            ModelConfig::Unet(c) => c.input_size,
            ModelConfig::Vit(c) => c.input_size,
            ModelConfig::Oracle { input_size, .. } => *input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Unet(c) => c.validate(),
            ModelConfig::Vit(c) => c.validate(),
            ModelConfig::Oracle { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct UNet {
    stem: Conv,
    encoder: Vec<Vec<ResidualBlock>>,
    up: Vec<Conv>,
    decoder: Vec<Vec<ResidualBlock>>,
    head: Conv,
}

impl UNet {
    fn build(cfg: &UNetConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let ch = &cfg.channels;
        let stem = Conv::new(store, rng, "stem", 3, cfg.in_channels, ch[0], 1, Pad::Same, true);
        let mut encoder = Vec::new();
        for (i, &c) in ch.iter().enumerate() {
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| {
                    let (cin, stride) = if b == 0 && i > 0 { (ch[i - 1], 2) } else { (c, 1) };
                    ResidualBlock::new(store, rng, &format!("enc{i}.block{b}"), cin, c, stride)
                })
                .collect();
            encoder.push(blocks);
        }
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        for i in (0..ch.len() - 1).rev() {
            up.push(Conv::new(store, rng, &format!("up{i}"), 3, ch[i + 1], ch[i], 1, Pad::Same, true));
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| {
                    let cin = if b == 0 { 2 * ch[i] } else { ch[i] };
                    ResidualBlock::new(store, rng, &format!("dec{i}.block{b}"), cin, ch[i], 1)
                })
                .collect();
            decoder.push(blocks);
        }
        let head = Conv::new(store, rng, "head", 1, ch[0], cfg.out_channels, 1, Pad::Same, true);
        UNet {
            stem,
            encoder,
            up,
            decoder,
            head,
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
        ablate_skip: Option<usize>,
    ) -> Result<Var> {
        let h = self.stem.forward(g, store, x)?;
        let mut h = g.relu(h);
        let mut skips = Vec::new();
        let last = self.encoder.len() - 1;
        for (i, stage) in self.encoder.iter().enumerate() {
            for block in stage {
                h = block.forward(g, store, h, train)?;
            }
            if i < last {
                skips.push(h);
            }
        }
        for (j, (up, stage)) in self.up.iter().zip(&self.decoder).enumerate() {
            let level = last - 1 - j;
            let u = g.upsample2x(h)?;
            let u = up.forward(g, store, u)?;
            let u = g.relu(u);
            let mut skip = skips[level];
            if ablate_skip == Some(level) {
                skip = g.scale(skip, 0.0);
            }
            h = g.concat(u, skip)?;
            for block in stage {
                h = block.forward(g, store, h, train)?;
            }
        }
        self.head.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
struct Vit {
    cfg: ViTConfig,
    patch: Conv,
    pos: usize,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    tail: Vec<Conv>,
    head: Conv,
}

impl Vit {
    fn build(cfg: &ViTConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        let patch = Conv::new(store, rng, "patch", cfg.patch, cfg.in_channels, d, cfg.patch, Pad::Valid, true);
        let pos = store.add(
            "pos_embed",
            Tensor::uniform(&[cfg.tokens(), d], 0.02, rng),
            true,
        );
        let blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, rng, &format!("block{i}"), d, cfg.heads, cfg.mlp_ratio))
            .collect();
        let ln = LayerNorm::new(store, "ln_final", d);
        let tc = cfg.tail_channels();
        let tail = (0..cfg.tail_upsamples)
            .map(|j| Conv::new(store, rng, &format!("tail{j}"), 3, tc[j], tc[j + 1], 1, Pad::Same, true))
            .collect();
        let head = Conv::new(store, rng, "head", 1, *tc.last().unwrap(), cfg.out_channels, 1, Pad::Same, true);
        Vit {
            cfg: cfg.clone(),
            patch,
            pos,
            blocks,
            ln,
            tail,
            head,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let side = self.cfg.input_size / self.cfg.patch;
        let d = self.cfg.embed_dim;
        let p = self.patch.forward(g, store, x)?;
        let mut t = g.reshape(p, &[n, side * side, d])?;
        let pos = g.param(store, self.pos);
        t = g.add_bias(t, pos)?;
        for b in &self.blocks {
            t = b.forward(g, store, t)?;
        }
        let t = self.ln.forward(g, store, t)?;
        let mut h = g.reshape(t, &[n, side, side, d])?;
        for conv in &self.tail {
            let u = g.upsample2x(h)?;
            let u = conv.forward(g, store, u)?;
            h = g.relu(u);
        }
        self.head.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
enum Net {
    Unet(UNet),
    Vit(Vit),
    Oracle,
}

/// An architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl Model {
    /// Build and initialize; the same `(config, seed)` yields identical
    /// parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = match &config {
            ModelConfig::Unet(c) => Net::Unet(UNet::build(c, &mut params, &mut rng)),
            ModelConfig::Vit(c) => Net::Vit(Vit::build(c, &mut params, &mut rng)),
            ModelConfig::Oracle { .. } => Net::Oracle,
        };
        Ok(Model {
            config,
            params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.net, Net::Oracle)
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// `(name, shape, count)` for every stored tensor, buffers included.
    pub fn layer_table(&self) -> Vec<(String, Vec<usize>, usize, bool)> {
        self.params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec(), e.value.len(), e.trainable))
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.input_size();
        let want = [s, s, self.config.in_channels()];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                "model input",
                format!("expected [n, {s}, {s}, {}], got {shape:?}", want[2]),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: Var, train: bool) -> Result<Var> {
        self.forward_ablated(g, x, train, None)
    }

    /// Forward pass with the U-Net skip at `level` replaced by zeros.
    pub fn forward_ablated(
        &self,
        g: &mut Graph,
        x: Var,
        train: bool,
        ablate_skip: Option<usize>,
    ) -> Result<Var> {
        self.check_input(g.shape(x))?;
        match &self.net {
            Net::Unet(u) => u.forward(g, &self.params, x, train, ablate_skip),
            Net::Vit(v) => v.forward(g, &self.params, x),
            Net::Oracle => Err(Error::Config("oracle model has no forward pass".into())),
        }
    }

    /// Eval-mode prediction, `[n, h, w, out]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = self.forward(&mut g, xv, false)?;
        Ok(g.value(y).clone())
    }

    /// Write queued buffer updates (batch-norm running statistics).
    pub fn apply_updates(&mut self, updates: Vec<(usize, Tensor)>) {
        for (id, t) in updates {
            *self.params.value_mut(id) = t;
        }
    }
}
