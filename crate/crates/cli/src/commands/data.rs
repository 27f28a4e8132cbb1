//! Dataset tooling: synthetic generation, statistics and the climatology.

use std::path::{Path, PathBuf};

use clap::Args;
use sstfill_core::blur::GaussianSpec;
use sstfill_core::stats::{self, Axis, GradientStats};
use sstfill_core::{gen_dataset, Climatology, ClimatologyOptions, SynthConfig};

use crate::error::Result;
use crate::io::{clim_path, csv_out, load_dataset, parse_index_list, parse_list, read_config};
use crate::Global;

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// TOML or JSON file with synthetic-generator fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub years: Option<usize>,
    /// Square grid side.
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory (defaults to --data-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_synth(g: &Global, a: &GenSynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(y) = a.years {
        cfg.n_years = y;
    }
    if let Some(s) = a.size {
        cfg.h = s;
        cfg.w = s;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let ds = gen_dataset(&cfg)?;
    let out = a.out.as_deref().unwrap_or(&g.data_dir);
    ds.save_dir(out)?;
    eprintln!(
        "wrote {} days of {}x{} to {} (hash {})",
        ds.len(),
        ds.h(),
        ds.w(),
        out.display(),
        ds.content_hash()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Persistence lags, as `a..b` or a comma list.
    #[arg(long, default_value = "1..5")]
    pub lag: String,
    /// Gradient exceedance thresholds in degrees.
    #[arg(long, default_value = "0.05,0.1,0.2,0.5,1.0")]
    pub thresholds: String,
    /// Histogram bin width in degrees.
    #[arg(long, default_value_t = 0.5)]
    pub bin_width: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

type Row = (String, f64, &'static str, u64);

fn gradient_rows(prefix: &str, g: &GradientStats) -> Vec<Row> {
    [("max", g.max), ("avg_max", g.avg_max), ("mean", g.mean), ("std", g.std)]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}_gradient_{k}"), v, "degC", g.n_pairs))
        .collect()
}

pub fn stats_rows(ds: &sstfill_core::Dataset, a: &StatsArgs) -> Result<Vec<Row>> {
    let lags = parse_index_list(&a.lag)?;
    let thresholds: Vec<f64> = parse_list(&a.thresholds)?;
    let mut rows: Vec<Row> = Vec::new();
    let ext = stats::extrema(ds)?;
    rows.push(("sst_min".into(), ext.min, "degC", ext.n_cells));
    rows.push(("sst_mean".into(), ext.mean, "degC", ext.n_cells));
    rows.push(("sst_max".into(), ext.max, "degC", ext.n_cells));
    for (name, axis) in [("spatial", Axis::Spatial), ("temporal", Axis::Temporal)] {
        let g = match axis {
            Axis::Spatial => stats::spatial_gradients(ds)?,
            Axis::Temporal => stats::temporal_gradients(ds)?,
        };
        rows.extend(gradient_rows(name, &g));
        let (frac, n) = stats::exceedance(ds, axis, &thresholds)?;
        for (t, f) in thresholds.iter().zip(frac) {
            rows.push((format!("{name}_exceed_gt_{t}"), f, "fraction", n));
        }
    }
    for &lag in &lags {
        let p = stats::persistence(ds, lag)?;
        rows.push((format!("persistence_mad_lag{lag}"), p.mad, "degC", p.n_pairs));
        rows.push((format!("persistence_rmsd_lag{lag}"), p.rmsd, "degC", p.n_pairs));
    }
    let hist = stats::histogram(ds, a.bin_width)?;
    let total = hist.total();
    for (k, &c) in hist.counts.iter().enumerate() {
        rows.push((format!("histogram_{}", hist.lower_edge(k)), c as f64, "count", total));
    }
    Ok(rows)
}

pub fn stats(g: &Global, a: &StatsArgs) -> Result<()> {
    let ds = load_dataset(&g.data_dir)?;
    let rows = stats_rows(&ds, a)?;
    let mut w = csv_out(a.out.as_deref(), "stats")?;
    w.write_record(["name", "value", "units", "n_pairs"])?;
    for (name, value, units, n) in rows {
        w.write_record([name, value.to_string(), units.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| crate::error::CliError::io("<csv>", e))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ClimArgs {
    /// Output file (defaults to climatology.sgr in --data-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final fraction of days left out of the climatology.
    #[arg(long, default_value_t = 0.12)]
    pub holdout: f64,
    /// Use every day, test period included.
    #[arg(long)]
    pub all_days: bool,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_space: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_time: f64,
    #[arg(long, default_value_t = 3.0)]
    pub truncate: f64,
    #[arg(long, default_value_t = 64)]
    pub iterations: usize,
}

pub fn clim(g: &Global, a: &ClimArgs) -> Result<()> {
    let ds = load_dataset(&g.data_dir)?;
    let days = if a.all_days {
        None
    } else {
        Some(0..ds.holdout_start(a.holdout))
    };
    let opts = ClimatologyOptions {
        blur: GaussianSpec::new(a.sigma_space, a.sigma_time, a.truncate)?,
        max_iterations: a.iterations,
        days,
    };
    let clim = Climatology::build(&ds, &opts)?;
    let out: PathBuf = clim_path(&g.data_dir, a.out.as_ref());
    clim.save(&out)?;
    report(&out, &clim);
    Ok(())
}

fn report(out: &Path, clim: &Climatology) {
    let p = &clim.provenance;
    eprintln!(
        "wrote {} from days {}..{}: {} interpolated cells, anomaly mean {:.4} std {:.4}",
        out.display(),
        p.day_start,
        p.day_end,
        p.interpolated_cells,
        clim.mean_anom,
        clim.std_anom
    );
}
