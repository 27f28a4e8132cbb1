//! Files, CSV output and the conventions shared by the subcommands.

use std::fs;
use std::io::{self, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sstfill_core::grid::Quadrant;
use sstfill_core::{Climatology, Dataset, Mode};
use sstfill_nn::{Checkpoint, CheckpointManifest, Model};

use crate::error::{usage, CliError, Result};

pub const CLIM_FILE: &str = "climatology.sgr";

/// Parse a TOML or JSON file (chosen by extension) into `T`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    parsed.map_err(|message| CliError::Parse {
        path: path.into(),
        message,
    })
}

/// CSV writer to a file or stdout. The only line that varies between runs is
/// the leading `#` comment.
pub fn csv_out(out: Option<&Path>, command: &str) -> Result<csv::Writer<Box<dyn Write>>> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?))
        }
        None => Box::new(io::stdout().lock()),
    };
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(sink, "# sstfill {command}, generated at unix time {secs}")
        .map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))?;
    Ok(csv::Writer::from_writer(sink))
}

pub fn load_dataset(dir: &Path) -> Result<Arc<Dataset>> {
    Ok(Arc::new(Dataset::load_dir(dir)?))
}

pub fn clim_path(data_dir: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| data_dir.join(CLIM_FILE))
}

pub fn load_clim(path: &Path) -> Result<Arc<Climatology>> {
    if !path.exists() {
        return Err(CliError::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "no climatology; run `sstfill clim` first"),
        ));
    }
    Ok(Arc::new(Climatology::load(path)?))
}

/// `a..b` (inclusive), `a` or `a,b,c`.
pub fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Usage(format!("cannot read {text:?} as a list of integers"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot read {s:?} in {text:?}")))
        })
        .collect()
}

pub fn parse_quadrant(text: &str) -> Result<Option<Quadrant>> {
    match text {
        "all" => Ok(None),
        q => Ok(Some(q.parse()?)),
    }
}

/// Day ranges for training, validation and testing: the final `holdout`
/// fraction is the test period and the `val_fraction` before it validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn new(ds: &Dataset, holdout: f64, val_fraction: f64) -> Result<Splits> {
        if !(0.0..1.0).contains(&holdout) || !(0.0..1.0).contains(&val_fraction) {
            return usage("holdout and validation fractions must lie in [0, 1)");
        }
        let n = ds.len();
        let hold = ds.holdout_start(holdout);
        let v0 = hold.saturating_sub((n as f64 * val_fraction).round() as usize);
        if v0 == 0 || v0 == hold || hold == n {
            return usage(format!("{n} days are too few for the requested splits"));
        }
        Ok(Splits {
            train: 0..v0,
            val: v0..hold,
            test: hold..n,
        })
    }
}

/// What a training run records next to its weights so that evaluation can
/// rebuild matching generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: Mode,
    pub quadrant: String,
    pub s_days: usize,
    pub holdout: f64,
    pub dataset_hash: String,
}

impl RunInfo {
    pub fn quadrant(&self) -> Result<Option<Quadrant>> {
        parse_quadrant(&self.quadrant)
    }
}

pub struct LoadedModel {
    pub model: Model,
    pub manifest: CheckpointManifest,
    pub info: RunInfo,
}

/// Load a checkpoint; runs without recorded metadata fall back to residual
/// mode on the whole grid.
pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let (model, manifest) = Checkpoint::load(dir)?;
    let s_days = (model.config().in_channels().max(1) - 1) / 2;
    let info = serde_json::from_value::<RunInfo>(manifest.extra.clone()).unwrap_or(RunInfo {
        mode: Mode::Residual,
        quadrant: "all".into(),
        s_days,
        holdout: 0.12,
        dataset_hash: String::new(),
    });
    if info.s_days != s_days {
        return Err(CliError::Parse {
            path: dir.into(),
            message: format!("metadata says {} days but the model takes {s_days}", info.s_days),
        });
    }
    Ok(LoadedModel { model, manifest, info })
}

/// The dataset and climatology a model was trained on, cut to its quadrant.
pub fn region(ds: &Arc<Dataset>, clim: &Arc<Climatology>, q: Option<Quadrant>) -> Result<(Arc<Dataset>, Arc<Climatology>)> {
    Ok(match q {
        None => (ds.clone(), clim.clone()),
        Some(q) => (Arc::new(ds.quadrant(q)?), Arc::new(clim.quadrant(q)?)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_index_list("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_index_list("2,7").unwrap(), vec![2, 7]);
        assert!(parse_index_list("5..1").is_err());
        assert!(parse_index_list("x").is_err());
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_list::<f64>("0.1, 0.5").unwrap(), vec![0.1, 0.5]);
        assert!(parse_list::<f64>("0.1,a").is_err());
    }
}
