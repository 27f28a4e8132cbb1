//! `eval` and `bench`: diff-mask RMSE of trained checkpoints.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use sstfill_core::grid::Quadrant;
use sstfill_core::{Climatology, Dataset, Generator, GeneratorConfig, Mode};
use sstfill_train::baselines::{ClimatologyBaseline, GaussianFill, Persistence1d, ShiftedClimatology};
use sstfill_train::eval::{degradation_curve, quadrant_eval, QuadrantModels};
use sstfill_train::{evaluate_many, EvalReport, ModelPredictor, Predictor};

use crate::error::{usage, CliError, Result};
use crate::io::{clim_path, csv_out, load_clim, load_dataset, load_model, region, LoadedModel};
use crate::Global;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One checkpoint directory, or four trained on the nw, ne, sw, se
    /// quadrants.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "testing")]
    pub profile: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an RMSE-versus-occlusion curve to this CSV.
    #[arg(long)]
    pub degradation: Option<PathBuf>,
    /// Donor visibility ranges for the curve, `lo-hi` pairs.
    #[arg(
        long,
        default_value = "0.75-0.85,0.65-0.75,0.55-0.65,0.45-0.55,0.35-0.45,0.25-0.35,0.15-0.25"
    )]
    pub levels: String,
    #[arg(long)]
    pub clim: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "testing")]
    pub profile: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub clim: Option<PathBuf>,
}

fn label(path: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
    match name(path) {
        Some(n) if n == "checkpoint" => path.parent().and_then(name).unwrap_or(n),
        Some(n) => n,
        None => "model".into(),
    }
}

/// How a set of checkpoints is evaluated together.
enum Layout {
    /// All models share one region.
    Shared(Option<Quadrant>),
    /// One model per quadrant, in NW, NE, SW, SE order.
    Quadrants([usize; 4]),
}

struct Loaded {
    models: Vec<LoadedModel>,
    labels: Vec<String>,
    layout: Layout,
    s_days: usize,
    mode: Mode,
    holdout: f64,
}

fn load_all(paths: &[PathBuf]) -> Result<Loaded> {
    let models: Vec<LoadedModel> = paths.iter().map(|p| load_model(p)).collect::<Result<_>>()?;
    let labels = paths.iter().map(|p| label(p)).collect();
    let first = &models[0].info;
    if models.iter().any(|m| m.info.s_days != first.s_days || m.info.mode != first.mode) {
        return usage("checkpoints differ in input days or mode");
    }
    let quads: Vec<Option<Quadrant>> = models.iter().map(|m| m.info.quadrant()).collect::<Result<_>>()?;
    let layout = if quads.iter().all(|q| *q == quads[0]) {
        Layout::Shared(quads[0])
    } else {
        let mut order = [usize::MAX; 4];
        for (i, q) in quads.iter().enumerate() {
            match q {
                Some(q) if order[q.index()] == usize::MAX => order[q.index()] = i,
                _ => return usage("mixed checkpoints must be exactly one per quadrant"),
            }
        }
        if order.contains(&usize::MAX) {
            return usage("mixed checkpoints must be exactly one per quadrant");
        }
        Layout::Quadrants(order)
    };
    Ok(Loaded {
        s_days: first.s_days,
        mode: first.mode,
        holdout: first.holdout,
        models,
        labels,
        layout,
    })
}

fn test_config(profile: &str, seed: u64, l: &Loaded, ds: &Dataset) -> Result<GeneratorConfig> {
    Ok(GeneratorConfig {
        s_days: l.s_days,
        mode: l.mode,
        base_days: Some(ds.holdout_start(l.holdout)..ds.len()),
        ..GeneratorConfig::profile(profile, seed)?
    })
}

fn report_record(name: &str, r: &EvalReport) -> Vec<String> {
    vec![
        name.to_string(),
        r.rmse.to_string(),
        r.batch_std.to_string(),
        r.cells.to_string(),
        r.samples.to_string(),
        r.mean_occlusion.to_string(),
    ]
}

fn parse_levels(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once('-')
                .ok_or_else(|| CliError::Usage(format!("level {pair:?} is not lo-hi")))?;
            let p = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad level {pair:?}")));
            Ok((p(lo)?, p(hi)?))
        })
        .collect()
}

struct Data {
    ds: Arc<Dataset>,
    clim: Arc<Climatology>,
}

fn open(g: &Global, clim: Option<&PathBuf>) -> Result<Data> {
    Ok(Data {
        ds: load_dataset(&g.data_dir)?,
        clim: load_clim(&clim_path(&g.data_dir, clim))?,
    })
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let l = load_all(&a.checkpoint)?;
    let d = open(g, a.clim.as_ref())?;
    let seed = g.seed.unwrap_or(0);
    let mut w = csv_out(a.out.as_deref(), "eval")?;
    w.write_record(["name", "rmse", "batch_std", "cells", "samples", "mean_occlusion"])?;
    match l.layout {
        Layout::Shared(q) => {
            let (ds, clim) = region(&d.ds, &d.clim, q)?;
            let cfg = test_config(&a.profile, seed, &l, &ds)?;
            let gen = Generator::new(ds.clone(), clim.clone(), cfg.clone())?;
            let preds: Vec<ModelPredictor> = l
                .models
                .iter()
                .zip(&l.labels)
                .map(|(m, name)| ModelPredictor::new(&m.model, name.clone()))
                .collect();
            let dyns: Vec<&dyn Predictor> = preds.iter().map(|p| p as &dyn Predictor).collect();
            for r in evaluate_many(&dyns, &gen, a.batches, a.batch_size)? {
                w.write_record(report_record(&r.name, &r))?;
            }
            if let Some(path) = &a.degradation {
                let levels = parse_levels(&a.levels)?;
                let mut dw = csv_out(Some(path), "eval degradation")?;
                dw.write_record(["name", "donor_lo", "donor_hi", "occlusion", "rmse", "samples"])?;
                for p in &preds {
                    for pt in degradation_curve(p, &ds, &clim, &cfg, &levels, a.batches, a.batch_size)? {
                        dw.write_record([
                            p.label.clone(),
                            pt.donor_visible.0.to_string(),
                            pt.donor_visible.1.to_string(),
                            pt.occlusion.to_string(),
                            pt.rmse.to_string(),
                            pt.samples.to_string(),
                        ])?;
                    }
                }
                dw.flush().map_err(|e| CliError::io(path, e))?;
            }
        }
        Layout::Quadrants(order) => {
            if a.degradation.is_some() {
                return usage("--degradation needs checkpoints that share a region");
            }
            let preds: Vec<ModelPredictor> = order
                .iter()
                .map(|&i| ModelPredictor::new(&l.models[i].model, l.labels[i].clone()))
                .collect();
            let cfg = test_config(&a.profile, seed, &l, &d.ds)?;
            let qr = quadrant_eval(
                [&preds[0], &preds[1], &preds[2], &preds[3]],
                &d.ds,
                &d.clim,
                &cfg,
                a.batches,
                a.batch_size,
            )?;
            for r in &qr.reports {
                w.write_record(report_record(&r.name, r))?;
            }
            let samples: usize = qr.reports.iter().map(|r| r.samples).sum();
            let cells: u64 = qr.reports.iter().map(|r| r.cells).sum();
            for (name, v) in [("quadrant_mean", qr.mean), ("quadrant_pooled", qr.pooled)] {
                w.write_record([name.to_string(), v.to_string(), String::new(), cells.to_string(), samples.to_string(), String::new()])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn bench(g: &Global, a: &BenchArgs) -> Result<()> {
    let l = load_all(&a.checkpoint)?;
    let d = open(g, a.clim.as_ref())?;
    let seed = g.seed.unwrap_or(0);
    let (ds, clim) = match l.layout {
        Layout::Shared(q) => region(&d.ds, &d.clim, q)?,
        Layout::Quadrants(_) => (d.ds.clone(), d.clim.clone()),
    };
    let gen = Generator::new(ds.clone(), clim, test_config(&a.profile, seed, &l, &ds)?)?;
    let singles: Vec<ModelPredictor> = l
        .models
        .iter()
        .zip(&l.labels)
        .map(|(m, name)| ModelPredictor::new(&m.model, name.clone()))
        .collect();
    let joined = match l.layout {
        Layout::Quadrants(o) => Some(QuadrantModels {
            models: o.map(|i| &l.models[i].model),
        }),
        Layout::Shared(_) => None,
    };
    let gauss = GaussianFill::default();
    let mut preds: Vec<&dyn Predictor> = match &joined {
        Some(q) => vec![q],
        None => singles.iter().map(|p| p as &dyn Predictor).collect(),
    };
    preds.extend([
        &Persistence1d as &dyn Predictor,
        &ClimatologyBaseline,
        &ShiftedClimatology,
        &gauss,
    ]);
    let reports = evaluate_many(&preds, &gen, a.batches, a.batch_size)?;
    let mut w = csv_out(a.out.as_deref(), "bench")?;
    w.write_record(["predictor", "month", "samples", "cells", "rmse", "batch_std"])?;
    for r in &reports {
        w.write_record([
            r.name.clone(),
            "all".into(),
            r.samples.to_string(),
            r.cells.to_string(),
            r.rmse.to_string(),
            r.batch_std.to_string(),
        ])?;
        for m in &r.monthly {
            w.write_record([
                r.name.clone(),
                m.month.to_string(),
                m.samples.to_string(),
                m.cells.to_string(),
                m.rmse.map(|v| v.to_string()).unwrap_or_default(),
                String::new(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}
