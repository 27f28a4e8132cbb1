//! Daily field sequences, their calendar, and the on-disk dataset directory.
//!
//! A dataset directory holds `manifest.json` plus one SGR1 file per present
//! day with channels `["sst", "land"]`. Any converter that writes this layout
//! can feed real satellite data into the pipeline.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField, Quadrant, MISSING};
use crate::sgr::{mask_channel, SgrStack};

pub const MIN_GRID: usize = 8;
pub const MANIFEST: &str = "manifest.json";

/// Day-of-year slot in `1..=365`. February 29 shares slot 59 with
/// February 28, and later days of a leap year shift down by one so that
/// every calendar date maps to the same slot in every year.
pub fn doy_slot(date: NaiveDate) -> usize {
    let ord = date.ordinal() as usize;
    if date.leap_year() && ord >= 60 {
        if ord == 60 {
            59
        } else {
            ord - 1
        }
    } else {
        ord
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    start: NaiveDate,
    land: Arc<Grid<bool>>,
    days: Vec<MaskedField>,
    missing: Vec<bool>,
    provenance: serde_json::Value,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        start: NaiveDate,
        land: Arc<Grid<bool>>,
        days: Vec<MaskedField>,
    ) -> Result<Self> {
        let (h, w) = land.dims();
        if h < MIN_GRID || w < MIN_GRID {
            return Err(Error::InvalidArgument(format!(
                "grid {h}x{w} is smaller than {MIN_GRID}x{MIN_GRID}"
            )));
        }
        if let Some(bad) = days.iter().position(|d| d.land() != &land) {
            return Err(Error::InvalidArgument(format!(
                "day {bad} has a different grid or land mask"
            )));
        }
        let n = days.len();
        Ok(Dataset {
            name: name.into(),
            start,
            land,
            days,
            missing: vec![false; n],
            provenance: serde_json::Value::Null,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn h(&self) -> usize {
        self.land.h()
    }

    pub fn w(&self) -> usize {
        self.land.w()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.land.dims()
    }

    pub fn land(&self) -> &Arc<Grid<bool>> {
        &self.land
    }

    pub fn sea_count(&self) -> usize {
        self.land.as_slice().iter().filter(|&&l| !l).count()
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn day(&self, t: usize) -> &MaskedField {
        &self.days[t]
    }

    pub fn days(&self) -> &[MaskedField] {
        &self.days
    }

    pub fn is_missing(&self, t: usize) -> bool {
        self.missing[t]
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + Duration::days(t as i64)
    }

    pub fn doy(&self, t: usize) -> usize {
        doy_slot(self.date(t))
    }

    /// Calendar month, 1..=12.
    pub fn month(&self, t: usize) -> u32 {
        self.date(t).month()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let delta = (date - self.start).num_days();
        (delta >= 0 && (delta as usize) < self.len()).then_some(delta as usize)
    }

    pub fn distinct_years(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        (self.date(self.len() - 1).year() - self.start.year() + 1) as usize
    }

    /// First index of the held-out tail covering `fraction` of the timeline.
    pub fn holdout_start(&self, fraction: f64) -> usize {
        let n = self.len();
        n - ((n as f64 * fraction).round() as usize).min(n)
    }

    /// Restrict every day to a sub-rectangle.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Dataset> {
        let land = Arc::new(self.land.crop(y0, x0, h, w)?);
        let days = self
            .days
            .iter()
            .map(|d| {
                MaskedField::new(
                    d.values().crop(y0, x0, h, w)?,
                    d.valid().crop(y0, x0, h, w)?,
                    land.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Dataset::new(format!("{}[{y0}:{},{x0}:{}]", self.name, y0 + h, x0 + w), self.start, land, days)?;
        out.missing = self.missing.clone();
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    pub fn quadrant(&self, q: Quadrant) -> Result<Dataset> {
        let (h, w) = self.dims();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "quadrants need even dimensions, got {h}x{w}"
            )));
        }
        let (y0, x0) = q.origin(h, w);
        self.crop(y0, x0, h / 2, w / 2)
    }

    /// SHA-256 over grid, calendar and every cell of every day.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.h() as u64).to_le_bytes());
        hasher.update((self.w() as u64).to_le_bytes());
        hasher.update(self.start.to_string().as_bytes());
        for &l in self.land.as_slice() {
            hasher.update([l as u8]);
        }
        for d in &self.days {
            for (v, &ok) in d.values().as_slice().iter().zip(d.valid().as_slice()) {
                let bits = if ok { v.to_bits() } else { MISSING.to_bits() };
                hasher.update(bits.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn day_stack(&self, t: usize) -> Result<SgrStack> {
        SgrStack::from_channels(
            vec!["sst".into(), "land".into()],
            &[self.days[t].values().clone(), mask_channel(&self.land)],
        )
    }

    /// Write the dataset directory (manifest plus per-day SGR1 files).
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let mut missing_days = Vec::new();
        for t in 0..self.len() {
            if self.missing[t] {
                missing_days.push(t);
                continue;
            }
            let file = format!("day_{t:05}.sgr");
            let mut bytes = Vec::new();
            self.day_stack(t)?
                .write_to(&mut bytes)
                .map_err(|e| Error::io(dir.join(&file), e))?;
            fs::write(dir.join(&file), &bytes).map_err(|e| Error::io(dir.join(&file), e))?;
            files.push(FileEntry {
                day: t,
                date: self.date(t),
                file,
                sha256: hex_digest(&bytes),
            });
        }
        let manifest = DatasetManifest {
            name: self.name.clone(),
            h: self.h(),
            w: self.w(),
            calendar: Calendar {
                start_date: self.start,
                n_days: self.len(),
                missing_days,
            },
            files,
            provenance: self.provenance.clone(),
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Load a dataset directory, verifying every file hash.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let (h, w) = (manifest.h, manifest.w);
        let mut land: Option<Arc<Grid<bool>>> = None;
        let mut values: Vec<Option<Grid<f32>>> = vec![None; manifest.calendar.n_days];
        for entry in &manifest.files {
            let fpath = dir.join(&entry.file);
            let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
            let actual = hex_digest(&bytes);
            if actual != entry.sha256 {
                return Err(Error::HashMismatch {
                    path: fpath,
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            let stack = SgrStack::read_from(&bytes[..])?;
            if (stack.h(), stack.w()) != (h, w) {
                return Err(Error::Format(format!(
                    "{} is {}x{}, manifest says {h}x{w}",
                    entry.file,
                    stack.h(),
                    stack.w()
                )));
            }
            let sst = stack
                .channel_by_name("sst")
                .ok_or_else(|| Error::Format(format!("{} has no sst channel", entry.file)))?;
            let day_land = stack
                .channel_by_name("land")
                .ok_or_else(|| Error::Format(format!("{} has no land channel", entry.file)))?
                .map(|&v| v > 0.5);
            match &land {
                None => land = Some(Arc::new(day_land)),
                Some(l) if **l != day_land => {
                    return Err(Error::Format(format!("{} changes the land mask", entry.file)))
                }
                Some(_) => {}
            }
            values[entry.day] = Some(sst);
        }
        let land = land.ok_or(Error::EmptyDataset)?;
        let mut missing = vec![false; manifest.calendar.n_days];
        let days = values
            .into_iter()
            .enumerate()
            .map(|(t, v)| match v {
                Some(v) => MaskedField::from_values(v, land.clone()),
                None => {
                    missing[t] = true;
                    Ok(MaskedField::empty(land.clone()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::new(manifest.name, manifest.calendar.start_date, land, days)?;
        ds.missing = missing;
        ds.provenance = manifest.provenance;
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub missing_days: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub day: usize,
    pub date: NaiveDate,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub h: usize,
    pub w: usize,
    pub calendar: Calendar,
    pub files: Vec<FileEntry>,
    /// Synthetic generator config, or a note from the external converter.
    pub provenance: serde_json::Value,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let cal = &self.calendar;
        if self.files.len() + cal.missing_days.len() != cal.n_days {
            return Err(Error::Format(format!(
                "{} files + {} missing days != {} days",
                self.files.len(),
                cal.missing_days.len(),
                cal.n_days
            )));
        }
        let mut seen = vec![false; cal.n_days];
        for t in self.files.iter().map(|f| f.day).chain(cal.missing_days.iter().copied()) {
            if t >= cal.n_days || seen[t] {
                return Err(Error::Format(format!("day {t} listed twice or out of range")));
            }
            seen[t] = true;
        }
        Ok(())
    }
}
