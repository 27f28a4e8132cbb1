//! `gen dump`: write generator samples for inspection.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use sstfill_core::{Generator, GeneratorConfig};

use crate::error::{CliError, Result};
use crate::io::{clim_path, csv_out, load_clim, load_dataset, read_config};
use crate::Global;

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// Write N samples as SGR1 stacks plus an index CSV.
    Dump(DumpArgs),
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long, default_value_t = 8)]
    pub n: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML or JSON file with generator fields; overrides --profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "testing")]
    pub profile: String,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub clim: Option<PathBuf>,
}

pub fn run(g: &Global, cmd: &GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Dump(a) => dump(g, a),
    }
}

fn dump(g: &Global, a: &DumpArgs) -> Result<()> {
    let ds = load_dataset(&g.data_dir)?;
    let clim = load_clim(&clim_path(&g.data_dir, a.clim.as_ref()))?;
    let mut cfg = match &a.config {
        Some(p) => read_config::<GeneratorConfig>(p)?,
        None => GeneratorConfig::profile(&a.profile, 0)?,
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(s) = a.days {
        cfg.s_days = s;
    }
    let gen = Generator::new(ds.clone(), clim, cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut index = csv_out(Some(&a.out.join("samples.csv")), "gen dump")?;
    index.write_record(["index", "file", "base", "date", "donor", "post_visible", "diff_fraction", "checksum"])?;
    for i in 0..a.n {
        let s = gen.sample_at(i)?;
        let file = format!("sample_{i:05}.sgr");
        s.to_sgr()?.save(a.out.join(&file))?;
        index.write_record([
            i.to_string(),
            file,
            s.base.to_string(),
            ds.date(s.base).to_string(),
            s.donor.to_string(),
            s.post_visible().to_string(),
            s.diff_fraction().to_string(),
            s.checksum(),
        ])?;
    }
    index.flush().map_err(|e| CliError::io(&a.out, e))?;
    eprintln!("wrote {} samples to {}", a.n, a.out.display());
    Ok(())
}
