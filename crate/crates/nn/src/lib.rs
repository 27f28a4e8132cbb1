//! A small reverse-mode autodiff kernel (NHWC convolutions, attention,
//! normalization layers, AdamW) and the U-Net / ViT reconstructors built on
//! it.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointManifest};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use kernels::Pad;
pub use models::{Model, ModelConfig, UNetConfig, ViTConfig};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
