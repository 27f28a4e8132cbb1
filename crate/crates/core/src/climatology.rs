//! Day-of-year climatology, anomalies and the shifted baseline.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blur::{blur_nan_volume, Boundary, GaussianSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField, Quadrant, MISSING};
use crate::sgr::SgrStack;

pub const DOY_SLOTS: usize = 366;
/// Slots that calendar dates map to; slot 366 mirrors slot 365.
const USED_SLOTS: usize = 365;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClimatologyOptions {
    pub blur: GaussianSpec,
    pub max_iterations: usize,
    /// Days of the dataset that contribute; `None` uses all of them.
    pub days: Option<Range<usize>>,
}

impl Default for ClimatologyOptions {
    fn default() -> Self {
        ClimatologyOptions {
            blur: GaussianSpec::default(),
            max_iterations: 64,
            days: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClimProvenance {
    pub dataset_hash: String,
    pub sigma_space: f64,
    pub sigma_time: f64,
    pub truncate: f64,
    pub iterations: usize,
    pub day_start: usize,
    pub day_end: usize,
    pub interpolated_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    h: usize,
    w: usize,
    mean_anom: f64,
    std_anom: f64,
    mean_sst: f64,
    std_sst: f64,
    provenance: ClimProvenance,
}

#[derive(Clone, Debug)]
pub struct Climatology {
    land: Arc<Grid<bool>>,
    doy_mean: Vec<Grid<f32>>,
    doy_count: Vec<Grid<u32>>,
    /// Mean and standard deviation of anomalies over contributing cells.
    pub mean_anom: f64,
    pub std_anom: f64,
    /// Raw SST moments, used when training on temperatures directly.
    pub mean_sst: f64,
    pub std_sst: f64,
    pub provenance: ClimProvenance,
}

/// Running first and second moments in f64.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

impl Climatology {
    /// Per-cell, per-slot mean over the selected days, with empty slots filled
    /// by the spatio-temporal NaN-aware blur (circular in day of year),
    /// iterated until every sea cell of every slot holds a value.
    pub fn build(ds: &Dataset, opts: &ClimatologyOptions) -> Result<Climatology> {
        opts.blur.validate()?;
        let range = opts.days.clone().unwrap_or(0..ds.len());
        if range.is_empty() || range.end > ds.len() {
            return Err(Error::EmptyDataset);
        }
        let (h, w) = ds.dims();
        let hw = h * w;
        let land = ds.land().clone();

        let mut sums = vec![0.0f64; USED_SLOTS * hw];
        let mut counts = vec![0u32; USED_SLOTS * hw];
        let mut observed = 0usize;
        for t in range.clone() {
            let base = (ds.doy(t) - 1) * hw;
            let day = ds.day(t);
            for i in 0..hw {
                if let Some(v) = day.value(i) {
                    sums[base + i] += v as f64;
                    counts[base + i] += 1;
                    observed += 1;
                }
            }
        }
        if observed == 0 {
            return Err(Error::EmptyDataset);
        }

        let mut values = vec![MISSING; USED_SLOTS * hw];
        let mut known = vec![false; USED_SLOTS * hw];
        for k in 0..USED_SLOTS * hw {
            if counts[k] > 0 {
                values[k] = (sums[k] / counts[k] as f64) as f32;
                known[k] = true;
            }
        }
        let is_sea = |k: usize| !land.as_slice()[k % hw];
        let interpolated_cells = (0..USED_SLOTS * hw)
            .filter(|&k| is_sea(k) && !known[k])
            .count();

        let mut iterations = 0;
        loop {
            let gaps = (0..USED_SLOTS * hw).filter(|&k| is_sea(k) && !known[k]).count();
            if gaps == 0 {
                break;
            }
            if iterations == opts.max_iterations {
                return Err(Error::GapFillIncomplete(gaps));
            }
            iterations += 1;
            let (filled, _) = blur_nan_volume(
                &values,
                &known,
                [USED_SLOTS, h, w],
                &opts.blur,
                Boundary::Wrap,
            );
            for k in 0..USED_SLOTS * hw {
                if is_sea(k) && !known[k] && filled[k].is_finite() {
                    values[k] = filled[k] as f32;
                    known[k] = true;
                }
            }
        }

        let mut doy_mean = Vec::with_capacity(DOY_SLOTS);
        let mut doy_count = Vec::with_capacity(DOY_SLOTS);
        for s in 0..USED_SLOTS {
            doy_mean.push(Grid::from_vec(h, w, values[s * hw..(s + 1) * hw].to_vec())?);
            doy_count.push(Grid::from_vec(h, w, counts[s * hw..(s + 1) * hw].to_vec())?);
        }
        doy_mean.push(doy_mean[USED_SLOTS - 1].clone());
        doy_count.push(Grid::filled(h, w, 0));

        let mut anom = Moments::default();
        let mut sst = Moments::default();
        for t in range.clone() {
            let clim = &doy_mean[ds.doy(t) - 1];
            let day = ds.day(t);
            for i in 0..hw {
                if let Some(v) = day.value(i) {
                    anom.push(v as f64 - clim.as_slice()[i] as f64);
                    sst.push(v as f64);
                }
            }
        }
        // A dataset identical to its own climatology has no anomaly spread;
        // fall back to unit scale so normalization stays defined.
        let unit_if_flat = |s: f64| if s > 1e-9 { s } else { 1.0 };

        Ok(Climatology {
            land,
            doy_mean,
            doy_count,
            mean_anom: anom.mean(),
            std_anom: unit_if_flat(anom.std()),
            mean_sst: sst.mean(),
            std_sst: unit_if_flat(sst.std()),
            provenance: ClimProvenance {
                dataset_hash: ds.content_hash(),
                sigma_space: opts.blur.sigma_space,
                sigma_time: opts.blur.sigma_time,
                truncate: opts.blur.truncate,
                iterations,
                day_start: range.start,
                day_end: range.end,
                interpolated_cells,
            },
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.land.dims()
    }

    pub fn land(&self) -> &Arc<Grid<bool>> {
        &self.land
    }

    fn slot(doy: usize) -> Result<usize> {
        if !(1..=DOY_SLOTS).contains(&doy) {
            return Err(Error::InvalidArgument(format!("day of year {doy} outside 1..=366")));
        }
        Ok(doy - 1)
    }

    /// Climatological mean raster for a day-of-year slot (NaN on land).
    pub fn mean(&self, doy: usize) -> Result<&Grid<f32>> {
        Ok(&self.doy_mean[Self::slot(doy)?])
    }

    pub fn count(&self, doy: usize) -> Result<&Grid<u32>> {
        Ok(&self.doy_count[Self::slot(doy)?])
    }

    /// Sea cells of a slot that had no observation and were interpolated.
    pub fn interpolated(&self, doy: usize) -> Result<Grid<bool>> {
        let count = self.count(doy)?;
        Ok(Grid::from_fn(count.h(), count.w(), |y, x| {
            !*self.land.get(y, x) && *count.get(y, x) == 0
        }))
    }

    fn check_dims(&self, field: &MaskedField) -> Result<()> {
        if field.dims() != self.dims() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", field.dims()),
            ));
        }
        Ok(())
    }

    /// `field - climatology` at measured cells; the mask is unchanged.
    pub fn anomaly(&self, field: &MaskedField, doy: usize) -> Result<MaskedField> {
        self.check_dims(field)?;
        let clim = self.mean(doy)?;
        let values = Grid::from_vec(
            field.h(),
            field.w(),
            field
                .values()
                .as_slice()
                .iter()
                .zip(clim.as_slice())
                .map(|(&v, &c)| v - c)
                .collect(),
        )?;
        MaskedField::new(values, field.valid().clone(), field.land().clone())
    }

    /// Inverse of [`Climatology::anomaly`].
    pub fn restore_sst(&self, anomaly: &MaskedField, doy: usize) -> Result<MaskedField> {
        self.check_dims(anomaly)?;
        let values = self.restore_raster(anomaly.values(), doy)?;
        MaskedField::new(values, anomaly.valid().clone(), anomaly.land().clone())
    }

    /// Add the climatology back to a dense anomaly raster.
    pub fn restore_raster(&self, anomaly: &Grid<f32>, doy: usize) -> Result<Grid<f32>> {
        let clim = self.mean(doy)?;
        if anomaly.dims() != clim.dims() {
            return Err(Error::shape(
                format!("{:?}", clim.dims()),
                format!("{:?}", anomaly.dims()),
            ));
        }
        Grid::from_vec(
            clim.h(),
            clim.w(),
            anomaly
                .as_slice()
                .iter()
                .zip(clim.as_slice())
                .map(|(&a, &c)| a + c)
                .collect(),
        )
    }

    /// Offset between a field and the climatology, averaged over the field's
    /// measured cells.
    pub fn visible_offset(&self, field: &MaskedField, doy: usize) -> Result<f64> {
        self.check_dims(field)?;
        let clim = self.mean(doy)?;
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..clim.len() {
            if let Some(v) = field.value(i) {
                sum += v as f64 - clim.as_slice()[i] as f64;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::NoValidCells);
        }
        Ok(sum / n as f64)
    }

    /// Climatology shifted so its mean over the field's visible cells matches
    /// the field's.
    pub fn shifted_baseline(&self, field: &MaskedField, doy: usize) -> Result<Grid<f32>> {
        let delta = self.visible_offset(field, doy)?;
        let clim = self.mean(doy)?;
        Ok(Grid::from_vec(
            clim.h(),
            clim.w(),
            clim.as_slice()
                .iter()
                .zip(self.land.as_slice())
                .map(|(&c, &l)| if l { MISSING } else { (c as f64 + delta) as f32 })
                .collect(),
        )?)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Climatology> {
        Ok(Climatology {
            land: Arc::new(self.land.crop(y0, x0, h, w)?),
            doy_mean: self
                .doy_mean
                .iter()
                .map(|g| g.crop(y0, x0, h, w))
                .collect::<Result<_>>()?,
            doy_count: self
                .doy_count
                .iter()
                .map(|g| g.crop(y0, x0, h, w))
                .collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    pub fn quadrant(&self, q: Quadrant) -> Result<Climatology> {
        let (h, w) = self.dims();
        let (y0, x0) = q.origin(h, w);
        self.crop(y0, x0, h / 2, w / 2)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    fn counts_path(path: &Path) -> PathBuf {
        path.with_extension("counts.sgr")
    }

    /// Persist as `<path>` (366 mean channels), `<stem>.counts.sgr` and a
    /// `<stem>.json` sidecar with the normalization constants and provenance.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let names: Vec<String> = (1..=DOY_SLOTS).map(|d| format!("doy_{d:03}")).collect();
        SgrStack::from_channels(names.clone(), &self.doy_mean)?.save(path)?;
        let counts: Vec<Grid<f32>> = self.doy_count.iter().map(|g| g.map(|&c| c as f32)).collect();
        SgrStack::from_channels(names, &counts)?.save(Self::counts_path(path))?;
        let (h, w) = self.dims();
        let sidecar = Sidecar {
            h,
            w,
            mean_anom: self.mean_anom,
            std_anom: self.std_anom,
            mean_sst: self.mean_sst,
            std_sst: self.std_sst,
            provenance: self.provenance.clone(),
        };
        let side = Self::sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Climatology> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let means = SgrStack::load(path)?;
        let counts = SgrStack::load(Self::counts_path(path))?;
        for s in [&means, &counts] {
            if (s.h(), s.w(), s.channels()) != (sidecar.h, sidecar.w, DOY_SLOTS) {
                return Err(Error::Format(format!(
                    "climatology stack is {}x{}x{}",
                    s.h(),
                    s.w(),
                    s.channels()
                )));
            }
        }
        let doy_mean: Vec<Grid<f32>> = (0..DOY_SLOTS).map(|k| means.channel(k)).collect();
        let land = Arc::new(doy_mean[0].map(|v| v.is_nan()));
        let doy_count = (0..DOY_SLOTS)
            .map(|k| counts.channel(k).map(|&c| c as u32))
            .collect();
        Ok(Climatology {
            land,
            doy_mean,
            doy_count,
            mean_anom: sidecar.mean_anom,
            std_anom: sidecar.std_anom,
            mean_sst: sidecar.mean_sst,
            std_sst: sidecar.std_sst,
            provenance: sidecar.provenance,
        })
    }
}
