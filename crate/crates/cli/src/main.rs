//! `sstfill`: reconstruct cloud-covered sea-surface temperature.
//!
//! Exit status is 0 on success, 2 for invalid arguments or configuration and
//! 3 for missing or inconsistent data.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{data, eval, gen, model, reconstruct, train};
use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "sstfill", version, about = "SST gap reconstruction")]
struct Cli {
    /// Seed for every random choice; commands fall back to their own
    /// defaults when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset directory; also holds climatology.sgr.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenSynth(data::GenSynthArgs),
    /// Dataset statistics as CSV.
    Stats(data::StatsArgs),
    /// Build the day-of-year climatology.
    Clim(data::ClimArgs),
    /// Occlusion generator tools.
    #[command(subcommand)]
    Gen(gen::GenCommand),
    /// Train a reconstructor.
    Train(train::TrainArgs),
    /// Diff-mask RMSE of checkpoints on the test period.
    Eval(eval::EvalArgs),
    /// Checkpoints against the baselines, per month.
    Bench(eval::BenchArgs),
    /// Reconstruct one day.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Model inspection.
    #[command(subcommand)]
    Model(model::ModelCommand),
}

pub struct Global {
    pub seed: Option<u64>,
    pub data_dir: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let g = Global {
        seed: cli.seed,
        data_dir: cli.data_dir,
    };
    match &cli.command {
        Command::GenSynth(a) => data::gen_synth(&g, a),
        Command::Stats(a) => data::stats(&g, a),
        Command::Clim(a) => data::clim(&g, a),
        Command::Gen(c) => gen::run(&g, c),
        Command::Train(a) => train::train(&g, a),
        Command::Eval(a) => eval::eval(&g, a),
        Command::Bench(a) => eval::bench(&g, a),
        Command::Reconstruct(a) => reconstruct::reconstruct(&g, a),
        Command::Model(c) => model::run(&g, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
