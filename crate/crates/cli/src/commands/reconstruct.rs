//! `reconstruct`: fill one day with a trained model.

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args;
use sstfill_core::grid::composite;
use sstfill_core::sgr::SgrStack;
use sstfill_core::{Generator, GeneratorConfig, Grid, MaskedField};
use sstfill_train::{ModelPredictor, Predictor};

use crate::error::{usage, Result};
use crate::io::{clim_path, load_clim, load_dataset, load_model, region};
use crate::Global;

pub const CHANNELS: [&str; 5] = ["input", "truth", "reconstruction", "composite", "climatology"];

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Day to reconstruct, YYYY-MM-DD.
    #[arg(long)]
    pub date: NaiveDate,
    /// Hide the cells this day's clouds cover, keeping them as truth.
    #[arg(long)]
    pub donor_date: Option<NaiveDate>,
    /// Output SGR1 file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clim: Option<PathBuf>,
}

pub fn reconstruct(g: &Global, a: &ReconstructArgs) -> Result<()> {
    let lm = load_model(&a.checkpoint)?;
    if lm.model.is_oracle() {
        return usage("an oracle checkpoint has nothing to reconstruct with");
    }
    let full = load_dataset(&g.data_dir)?;
    let full_clim = load_clim(&clim_path(&g.data_dir, a.clim.as_ref()))?;
    let (ds, clim) = region(&full, &full_clim, lm.info.quadrant()?)?;
    let day_of = |d: NaiveDate| {
        ds.index_of(d)
            .ok_or_else(|| crate::error::CliError::Usage(format!("{d} is outside the dataset calendar")))
    };
    let t = day_of(a.date)?;
    let donor = a.donor_date.map(day_of).transpose()?;
    let cfg = GeneratorConfig {
        s_days: lm.info.s_days,
        mode: lm.info.mode,
        ..GeneratorConfig::testing(0)
    };
    let gen = Generator::new(ds.clone(), clim.clone(), cfg)?;
    let sample = gen.sample_for(t, donor)?;
    let pred = ModelPredictor::new(&lm.model, "model").predict(&gen, std::slice::from_ref(&sample))?;

    let (h, w) = ds.dims();
    let truth = ds.day(t);
    let keep = Grid::from_fn(h, w, |y, x| !sample.diff(y * w + x));
    let input: MaskedField = truth.intersect(&keep)?;
    let land = ds.land();
    let recon = Grid::from_fn(h, w, |y, x| {
        let i = y * w + x;
        if land.as_slice()[i] {
            f32::NAN
        } else {
            pred[0][i]
        }
    });
    let filled = composite(&recon, &input)?;
    let clim_day = clim.mean(ds.doy(t))?.clone();
    let stack = SgrStack::from_channels(
        CHANNELS.map(String::from).to_vec(),
        &[
            input.values().clone(),
            truth.values().clone(),
            recon,
            filled.values().clone(),
            clim_day,
        ],
    )?;
    stack.save(&a.out)?;
    eprintln!(
        "reconstructed {} ({} of {} sea cells observed) into {}",
        a.date,
        input.valid_count(),
        input.sea_count(),
        a.out.display()
    );
    Ok(())
}
