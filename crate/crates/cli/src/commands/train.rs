//! `train`: fit a reconstructor on a dataset directory.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use sstfill_core::maskgen::Embed;
use sstfill_core::{Generator, GeneratorConfig, Mode};
use sstfill_nn::{Model, ModelConfig, UNetConfig, ViTConfig};
use sstfill_train::callbacks::TestCallback;
use sstfill_train::{fit, FitOptions, TrainConfig};

use crate::error::{usage, CliError, Result};
use crate::io::{clim_path, load_clim, load_dataset, parse_list, parse_quadrant, read_config, region, RunInfo, Splits};
use crate::Global;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// unet32, unet64, vit, or unet (needs --channels).
    #[arg(long, default_value = "unet32")]
    pub arch: String,
    /// Comma-separated U-Net stage widths, e.g. 16,32,64.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub blocks_per_stage: Option<usize>,
    /// Number of input days (current day included).
    #[arg(long = "days", default_value_t = 3)]
    pub s_days: usize,
    /// Model input side; must match the (quadrant) grid.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value = "all")]
    pub quadrant: String,
    #[arg(long, default_value = "residual")]
    pub mode: Mode,
    /// TOML or JSON file with training fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Occlusion profile of the training generator.
    #[arg(long, default_value = "training")]
    pub profile: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.12)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0.08)]
    pub val_fraction: f64,
    /// Batches per periodic test-period RMSE check.
    #[arg(long, default_value_t = 4)]
    pub test_batches: usize,
    /// Also test with samples placed in a larger canvas: outer_h,outer_w,y0,x0.
    #[arg(long)]
    pub embed_test: Option<String>,
    #[arg(long)]
    pub clim: Option<PathBuf>,
}

pub fn build_model(a: &TrainArgs, size: usize, seed: u64) -> Result<Model> {
    let mut unet = match a.arch.as_str() {
        "unet32" => UNetConfig::unet32(a.s_days, size),
        "unet64" => UNetConfig::unet64(a.s_days, size),
        "unet" if a.channels.is_some() => UNetConfig::new(&[], a.s_days, size),
        "vit" => {
            if a.channels.is_some() || a.blocks_per_stage.is_some() {
                return usage("--channels and --blocks-per-stage apply to U-Nets only");
            }
            return Ok(Model::new(ModelConfig::Vit(ViTConfig::new(a.s_days, size)), seed)?);
        }
        other => return usage(format!("unknown architecture {other:?} (unet32, unet64, vit, unet with --channels)")),
    };
    if let Some(c) = &a.channels {
        unet.channels = parse_list(c)?;
    }
    if let Some(b) = a.blocks_per_stage {
        unet.blocks_per_stage = b;
    }
    Ok(Model::new(ModelConfig::Unet(unet), seed)?)
}

fn train_config(g: &Global, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.steps {
        cfg.steps_per_epoch = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr0 = v;
        cfg.lr_min = cfg.lr_min.min(v / 2.0);
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_embed(text: &str) -> Result<Embed> {
    match parse_list::<usize>(text)?[..] {
        [outer_h, outer_w, y0, x0] => Ok(Embed { outer_h, outer_w, y0, x0 }),
        _ => usage(format!("--embed-test wants outer_h,outer_w,y0,x0, got {text:?}")),
    }
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(g, a)?;
    let full = load_dataset(&g.data_dir)?;
    let full_clim = load_clim(&clim_path(&g.data_dir, a.clim.as_ref()))?;
    let quadrant = parse_quadrant(&a.quadrant)?;
    let (ds, clim) = region(&full, &full_clim, quadrant)?;
    let (h, w) = ds.dims();
    if h != w {
        return usage(format!("grid {h}x{w} is not square"));
    }
    let size = a.size.unwrap_or(h);
    if size != h {
        return usage(format!("--size {size} does not match the {h}x{w} grid"));
    }
    let splits = Splits::new(&ds, a.holdout, a.val_fraction)?;
    let seed = cfg.seed;
    let generator = |profile: &str, offset: u64, days, embed| -> Result<Generator> {
        let c = GeneratorConfig {
            s_days: a.s_days,
            mode: a.mode,
            base_days: Some(days),
            embed,
            ..GeneratorConfig::profile(profile, seed.wrapping_add(offset))?
        };
        Ok(Generator::new(ds.clone(), clim.clone(), c)?)
    };
    let train_gen = generator(&a.profile, 1, splits.train.clone(), None)?;
    let val_gen = generator("testing", 2, splits.val.clone(), None)?;
    let mut tests = vec![TestCallback {
        name: "test_rmse".into(),
        generator: generator("testing", 3, splits.test.clone(), None)?,
        interval: cfg.eval_interval,
        n_batches: a.test_batches,
        batch_size: cfg.batch_size,
    }];
    if let Some(e) = &a.embed_test {
        tests.push(TestCallback {
            name: "embedded_rmse".into(),
            generator: generator("testing", 3, splits.test.clone(), Some(parse_embed(e)?))?,
            interval: cfg.eval_interval,
            n_batches: a.test_batches,
            batch_size: cfg.batch_size,
        });
    }
    let mut model = build_model(a, size, seed)?;
    eprintln!(
        "training {} ({} parameters) on {}x{} days {:?}, validating on {:?}",
        a.arch,
        model.param_count(),
        h,
        w,
        splits.train,
        splits.val
    );
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let info = RunInfo {
        mode: a.mode,
        quadrant: a.quadrant.clone(),
        s_days: a.s_days,
        holdout: a.holdout,
        dataset_hash: full.content_hash(),
    };
    let opts = FitOptions {
        checkpoint_dir: Some(a.out.join("checkpoint")),
        checkpoint_extra: serde_json::to_value(&info).map_err(|e| CliError::Usage(e.to_string()))?,
        tests,
        on_epoch: Some(Box::new(|r| {
            eprintln!(
                "epoch {:>3} train {:.5} val {:.5} lr {:.2e}{}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.lr,
                if r.checkpoint { " *" } else { "" }
            )
        })),
        ..Default::default()
    };
    let outcome = fit(&mut model, &train_gen, &val_gen, &cfg, opts)?;

    let log_path = a.out.join("train_log.csv");
    let mut f = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    writeln!(f, "# sstfill train, {} epochs, best epoch {}", outcome.log.epochs.len(), outcome.best_epoch)
        .map_err(|e| CliError::io(&log_path, e))?;
    outcome.log.write_csv(f)?;
    let timing = a.out.join("timing.csv");
    outcome
        .log
        .write_timing_csv(fs::File::create(&timing).map_err(|e| CliError::io(&timing, e))?)?;
    eprintln!(
        "best validation loss {:.5} at epoch {}; checkpoint in {}",
        outcome.best_val_loss,
        outcome.best_epoch,
        a.out.join("checkpoint").display()
    );
    Ok(())
}
