//! `model info`: layer table and parameter count.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use sstfill_nn::{Model, ModelConfig, UNetConfig, ViTConfig};

use crate::error::{usage, Result};
use crate::io::load_model;
use crate::Global;

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Print the layer table of a checkpoint or of a named architecture.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[arg(long, conflicts_with = "arch")]
    pub checkpoint: Option<PathBuf>,
    /// unet32, unet64 or vit.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long = "days", default_value_t = 3)]
    pub s_days: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

pub fn run(g: &Global, cmd: &ModelCommand) -> Result<()> {
    match cmd {
        ModelCommand::Info(a) => info(g, a),
    }
}

fn info(g: &Global, a: &InfoArgs) -> Result<()> {
    let model = match (&a.checkpoint, a.arch.as_deref()) {
        (Some(dir), _) => {
            let lm = load_model(dir)?;
            println!("checkpoint step {}", lm.manifest.step);
            lm.model
        }
        (None, Some(arch)) => {
            let cfg = match arch {
                "unet32" => ModelConfig::Unet(UNetConfig::unet32(a.s_days, a.size)),
                "unet64" => ModelConfig::Unet(UNetConfig::unet64(a.s_days, a.size)),
                "vit" => ModelConfig::Vit(ViTConfig::new(a.s_days, a.size)),
                other => return usage(format!("unknown architecture {other:?}")),
            };
            Model::new(cfg, g.seed.unwrap_or(0))?
        }
        (None, None) => return usage("give --checkpoint or --arch"),
    };
    println!("{}", serde_json::to_string(model.config()).unwrap_or_default());
    println!("{:<48} {:>20} {:>10} {:>9}", "tensor", "shape", "count", "trainable");
    for (name, shape, count, trainable) in model.layer_table() {
        println!("{name:<48} {:>20} {count:>10} {trainable:>9}", format!("{shape:?}"));
    }
    println!("trainable parameters: {}", model.param_count());
    Ok(())
}
