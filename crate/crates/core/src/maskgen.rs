//! Training and evaluation sample generator.
//!
//! A sample pairs a base day with a donor day: the donor's clouds are laid
//! over the real observations of the base day and its `s - 1` predecessors,
//! and the network must recover the cells that were visible in reality but
//! hidden in the input (the diff mask).
//!
//! Sample content is a pure function of `(seed, sample index)`.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::climatology::Climatology;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField};
use crate::sgr::SgrStack;

/// Value written into occluded input cells (normalized space).
pub const FILL: f32 = 0.0;

/// What the network sees and predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Standardized anomaly relative to the day-of-year climatology.
    #[default]
    Residual,
    /// Standardized raw temperature.
    Direct,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Mode::Residual),
            "direct" => Ok(Mode::Direct),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

/// Maps temperatures to network space and back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mode: Mode,
    pub offset: f64,
    pub scale: f64,
}

impl Normalizer {
    pub fn new(clim: &Climatology, mode: Mode) -> Self {
        let (offset, scale) = match mode {
            Mode::Residual => (clim.mean_anom, clim.std_anom),
            Mode::Direct => (clim.mean_sst, clim.std_sst),
        };
        Normalizer {
            mode,
            offset,
            scale,
        }
    }

    #[inline]
    pub fn encode(&self, sst: f32, clim: f32) -> f32 {
        let base = match self.mode {
            Mode::Residual => sst as f64 - clim as f64,
            Mode::Direct => sst as f64,
        };
        ((base - self.offset) / self.scale) as f32
    }

    #[inline]
    pub fn decode(&self, z: f32, clim: f32) -> f32 {
        let base = z as f64 * self.scale + self.offset;
        match self.mode {
            Mode::Residual => (base + clim as f64) as f32,
            Mode::Direct => base as f32,
        }
    }
}

/// Places generated crops into a larger canvas whose remaining cells are
/// occluded and treated as land.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embed {
    pub outer_h: usize,
    pub outer_w: usize,
    pub y0: usize,
    pub x0: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub s_days: usize,
    pub min_base_visible: f64,
    pub min_post_visible: f64,
    /// Upper bound on post-occlusion visibility; `1.0` disables it.
    pub max_post_visible: f64,
    pub min_diff_sea_fraction: f64,
    /// Visible-sea range a donor day must fall in.
    pub donor_visible: (f64, f64),
    pub max_retries: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Base days are drawn from this index range (whole dataset if unset).
    pub base_days: Option<Range<usize>>,
    pub embed: Option<Embed>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::testing(0)
    }
}

impl GeneratorConfig {
    /// Lighter occlusion, calibrated so inputs keep about 46% of the sea
    /// visible on the bundled synthetic data.
    pub fn testing(seed: u64) -> Self {
        GeneratorConfig {
            s_days: 1,
            min_base_visible: 0.40,
            min_post_visible: 0.05,
            max_post_visible: 1.0,
            min_diff_sea_fraction: 0.10,
            donor_visible: (0.57, 0.95),
            max_retries: 100,
            seed,
            mode: Mode::Residual,
            base_days: None,
            embed: None,
        }
    }

    /// Heavier occlusion: about 25% visible and 40% of the sea in the diff
    /// mask.
    pub fn training(seed: u64) -> Self {
        GeneratorConfig {
            donor_visible: (0.25, 0.52),
            ..GeneratorConfig::testing(seed)
        }
    }

    pub fn profile(name: &str, seed: u64) -> Result<Self> {
        match name {
            "testing" | "test" => Ok(GeneratorConfig::testing(seed)),
            "training" | "train" => Ok(GeneratorConfig::training(seed)),
            _ => Err(Error::InvalidArgument(format!("unknown profile {name:?}"))),
        }
    }

    pub fn channels_in(&self) -> usize {
        2 * self.s_days + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.s_days == 0 {
            return bad("s_days must be at least 1");
        }
        if !(0.0 < self.min_post_visible
            && self.min_post_visible < self.min_base_visible
            && self.min_base_visible <= 1.0)
        {
            return bad("require 0 < min_post_visible < min_base_visible <= 1");
        }
        if self.max_post_visible < self.min_post_visible {
            return bad("max_post_visible below min_post_visible");
        }
        if self.min_diff_sea_fraction <= 0.0 {
            return bad("min_diff_sea_fraction must be positive");
        }
        let (lo, hi) = self.donor_visible;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad("donor_visible must be an ordered range inside [0, 1]");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }
}

/// One generated input/target pair, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub h: usize,
    pub w: usize,
    pub s_days: usize,
    /// `[anom_0, mask_0, ..., anom_{s-1}, mask_{s-1}, land]`, day 0 = base.
    pub x: Vec<f32>,
    /// `[truth, real mask, diff mask]`.
    pub y: Vec<f32>,
    pub base: usize,
    pub donor: usize,
    pub doy: usize,
}

impl Sample {
    pub fn cx(&self) -> usize {
        2 * self.s_days + 1
    }

    pub fn x_at(&self, i: usize, c: usize) -> f32 {
        self.x[i * self.cx() + c]
    }

    pub fn truth(&self, i: usize) -> f32 {
        self.y[i * 3]
    }

    pub fn real(&self, i: usize) -> bool {
        self.y[i * 3 + 1] > 0.5
    }

    pub fn diff(&self, i: usize) -> bool {
        self.y[i * 3 + 2] > 0.5
    }

    pub fn land(&self, i: usize) -> bool {
        self.x_at(i, 2 * self.s_days) > 0.5
    }

    /// Input visibility mask of day `k` (0 = base day).
    pub fn input_valid(&self, k: usize, i: usize) -> bool {
        self.x_at(i, 2 * k + 1) > 0.5
    }

    pub fn sea_count(&self) -> usize {
        (0..self.h * self.w).filter(|&i| !self.land(i)).count()
    }

    pub fn diff_count(&self) -> usize {
        (0..self.h * self.w).filter(|&i| self.diff(i)).count()
    }

    /// Visible sea fraction of the base-day input.
    pub fn post_visible(&self) -> f64 {
        let n = (0..self.h * self.w).filter(|&i| self.input_valid(0, i)).count();
        n as f64 / self.sea_count().max(1) as f64
    }

    pub fn base_visible(&self) -> f64 {
        let n = (0..self.h * self.w).filter(|&i| self.real(i)).count();
        n as f64 / self.sea_count().max(1) as f64
    }

    pub fn diff_fraction(&self) -> f64 {
        self.diff_count() as f64 / self.sea_count().max(1) as f64
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.x.iter().chain(&self.y) {
            hasher.update(v.to_le_bytes());
        }
        hasher.update((self.base as u64).to_le_bytes());
        hasher.update((self.donor as u64).to_le_bytes());
        crate::dataset::hex_digest(&hasher.finalize())
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.cx() + 3);
        for k in 0..self.s_days {
            names.push(format!("anom_{k}"));
            names.push(format!("mask_{k}"));
        }
        names.extend(["land", "truth", "real_mask", "diff_mask"].map(String::from));
        names
    }

    /// Input and target channels in one stack.
    pub fn to_sgr(&self) -> Result<SgrStack> {
        let (cx, n) = (self.cx(), self.h * self.w);
        let mut data = Vec::with_capacity(n * (cx + 3));
        for i in 0..n {
            data.extend_from_slice(&self.x[i * cx..(i + 1) * cx]);
            data.extend_from_slice(&self.y[i * 3..(i + 1) * 3]);
        }
        SgrStack::new(self.h, self.w, self.channel_names(), data)
    }

    fn embed(self, e: &Embed) -> Result<Sample> {
        if e.y0 + self.h > e.outer_h || e.x0 + self.w > e.outer_w {
            return Err(Error::InvalidArgument(format!(
                "{}x{} crop does not fit at ({}, {}) in {}x{}",
                self.h, self.w, e.y0, e.x0, e.outer_h, e.outer_w
            )));
        }
        let cx = self.cx();
        let mut x = vec![FILL; e.outer_h * e.outer_w * cx];
        let mut y = vec![0.0; e.outer_h * e.outer_w * 3];
        for oi in 0..e.outer_h * e.outer_w {
            x[oi * cx + cx - 1] = 1.0;
        }
        for r in 0..self.h {
            for c in 0..self.w {
                let (i, oi) = (r * self.w + c, (r + e.y0) * e.outer_w + c + e.x0);
                x[oi * cx..(oi + 1) * cx].copy_from_slice(&self.x[i * cx..(i + 1) * cx]);
                y[oi * 3..(oi + 1) * 3].copy_from_slice(&self.y[i * 3..(i + 1) * 3]);
            }
        }
        Ok(Sample {
            h: e.outer_h,
            w: e.outer_w,
            x,
            y,
            ..self
        })
    }
}

/// `real ∧ donor` if it keeps enough of the sea visible and hides enough of
/// the real observation, else `None`.
pub fn compose_masks(
    real_valid: &Grid<bool>,
    donor_valid: &Grid<bool>,
    land: &Grid<bool>,
    cfg: &GeneratorConfig,
) -> Result<Option<Grid<bool>>> {
    if real_valid.dims() != donor_valid.dims() || real_valid.dims() != land.dims() {
        return Err(Error::shape(
            format!("{:?}", real_valid.dims()),
            format!("{:?} / {:?}", donor_valid.dims(), land.dims()),
        ));
    }
    let (h, w) = real_valid.dims();
    let mut sea = 0usize;
    let mut visible = 0usize;
    let mut diff = 0usize;
    let mut out = Vec::with_capacity(h * w);
    for ((&r, &d), &l) in real_valid
        .as_slice()
        .iter()
        .zip(donor_valid.as_slice())
        .zip(land.as_slice())
    {
        let a = r && d && !l;
        if !l {
            sea += 1;
            visible += a as usize;
            diff += (r && !a) as usize;
        }
        out.push(a);
    }
    if sea == 0 {
        return Err(Error::NoSeaCells);
    }
    let post = visible as f64 / sea as f64;
    let diff_frac = diff as f64 / sea as f64;
    if post >= cfg.min_post_visible && post <= cfg.max_post_visible && diff_frac >= cfg.min_diff_sea_fraction {
        Ok(Some(Grid::from_vec(h, w, out)?))
    } else {
        Ok(None)
    }
}

/// Day indices with enough visible sea and `s - 1` predecessors.
pub fn qualifying_days(ds: &Dataset, cfg: &GeneratorConfig, visibility: &[f64]) -> Vec<usize> {
    let range = cfg.base_days.clone().unwrap_or(0..ds.len());
    let start = range.start.max(cfg.s_days - 1);
    (start..range.end.min(ds.len()))
        .filter(|&t| visibility[t] >= cfg.min_base_visible)
        .collect()
}

/// Uniform draw among qualifying days.
pub fn sample_base_day(rng: &mut impl Rng, candidates: &[usize]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoQualifyingDay(
            "no day has enough visible sea and history".into(),
        ));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

fn visibility(ds: &Dataset) -> Vec<f64> {
    let sea = ds.sea_count().max(1) as f64;
    ds.days().iter().map(|d| d.valid_count() as f64 / sea).collect()
}

/// Deterministic sample source over one dataset and climatology.
#[derive(Clone)]
pub struct Generator {
    ds: Arc<Dataset>,
    clim: Arc<Climatology>,
    cfg: GeneratorConfig,
    norm: Normalizer,
    base_candidates: Vec<usize>,
    donor_candidates: Vec<usize>,
    next_index: u64,
}

impl Generator {
    pub fn new(ds: Arc<Dataset>, clim: Arc<Climatology>, cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.dims() != clim.dims() {
            return Err(Error::shape(
                format!("{:?}", ds.dims()),
                format!("climatology {:?}", clim.dims()),
            ));
        }
        let vis = visibility(&ds);
        let base_candidates = qualifying_days(&ds, &cfg, &vis);
        if base_candidates.is_empty() {
            return Err(Error::NoQualifyingDay(format!(
                "no day with visible sea >= {} and {} predecessors",
                cfg.min_base_visible,
                cfg.s_days - 1
            )));
        }
        let (lo, hi) = cfg.donor_visible;
        let donor_candidates: Vec<usize> = (0..ds.len())
            .filter(|&t| vis[t] >= lo && vis[t] <= hi)
            .collect();
        if donor_candidates.is_empty() {
            return Err(Error::NoQualifyingDay(format!(
                "no donor day with visible sea in [{lo}, {hi}]"
            )));
        }
        let norm = Normalizer::new(&clim, cfg.mode);
        Ok(Generator {
            ds,
            clim,
            cfg,
            norm,
            base_candidates,
            donor_candidates,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.ds
    }

    pub fn climatology(&self) -> &Arc<Climatology> {
        &self.clim
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn base_candidates(&self) -> &[usize] {
        &self.base_candidates
    }

    pub fn position(&self) -> u64 {
        self.next_index
    }

    pub fn seek(&mut self, index: u64) {
        self.next_index = index;
    }

    fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        rng
    }

    /// The sample at a given stream position; independent of any other call.
    pub fn sample_at(&self, index: u64) -> Result<Sample> {
        let mut rng = self.rng_for(index);
        let base = sample_base_day(&mut rng, &self.base_candidates)?;
        let land = self.ds.land();
        let real = self.ds.day(base);
        for _ in 0..self.cfg.max_retries {
            let donor = self.donor_candidates[rng.random_range(0..self.donor_candidates.len())];
            if donor == base {
                continue;
            }
            let donor_valid = self.ds.day(donor).valid();
            if let Some(artificial) = compose_masks(real.valid(), donor_valid, land, &self.cfg)? {
                let sample = self.assemble(base, donor, &artificial, donor_valid)?;
                return match &self.cfg.embed {
                    Some(e) => sample.embed(e),
                    None => Ok(sample),
                };
            }
        }
        Err(Error::RetriesExhausted(self.cfg.max_retries))
    }

    /// The sample for a chosen day, bypassing the random draw and the
    /// visibility constraints. With a donor the current day keeps
    /// `real ∧ donor` and earlier days are masked by the donor; without one
    /// nothing is hidden and `donor` is set to `base`.
    pub fn sample_for(&self, base: usize, donor: Option<usize>) -> Result<Sample> {
        let s = self.cfg.s_days;
        if base + 1 < s || base >= self.ds.len() {
            return Err(Error::InvalidArgument(format!(
                "day {base} needs {} predecessors in a {}-day dataset",
                s - 1,
                self.ds.len()
            )));
        }
        let land = self.ds.land();
        let real = self.ds.day(base).valid();
        let (artificial, keep, donor) = match donor {
            Some(d) if d < self.ds.len() => {
                let dv = self.ds.day(d).valid().clone();
                let art = Grid::from_fn(real.h(), real.w(), |y, x| {
                    *real.get(y, x) && *dv.get(y, x) && !*land.get(y, x)
                });
                (art, dv, d)
            }
            Some(d) => return Err(Error::InvalidArgument(format!("donor day {d} is out of range"))),
            None => (real.clone(), Grid::filled(real.h(), real.w(), true), base),
        };
        let sample = self.assemble(base, donor, &artificial, &keep)?;
        match &self.cfg.embed {
            Some(e) => sample.embed(e),
            None => Ok(sample),
        }
    }

    fn assemble(
        &self,
        base: usize,
        donor: usize,
        artificial: &Grid<bool>,
        donor_valid: &Grid<bool>,
    ) -> Result<Sample> {
        let (h, w) = self.ds.dims();
        let n = h * w;
        let s = self.cfg.s_days;
        let cx = 2 * s + 1;
        let land = self.ds.land().as_slice();
        let mut x = vec![FILL; n * cx];
        for k in 0..s {
            let t = base - k;
            let day: &MaskedField = self.ds.day(t);
            let clim = self.clim.mean(self.ds.doy(t))?.as_slice();
            let vals = day.values().as_slice();
            let real = day.valid().as_slice();
            let keep: &[bool] = if k == 0 {
                artificial.as_slice()
            } else {
                donor_valid.as_slice()
            };
            for i in 0..n {
                if real[i] && keep[i] && !land[i] {
                    x[i * cx + 2 * k] = self.norm.encode(vals[i], clim[i]);
                    x[i * cx + 2 * k + 1] = 1.0;
                }
            }
        }
        for i in 0..n {
            x[i * cx + 2 * s] = if land[i] { 1.0 } else { 0.0 };
        }

        let day = self.ds.day(base);
        let doy = self.ds.doy(base);
        let clim = self.clim.mean(doy)?.as_slice();
        let mut y = vec![0.0; n * 3];
        for i in 0..n {
            if let Some(v) = day.value(i) {
                y[i * 3] = self.norm.encode(v, clim[i]);
                y[i * 3 + 1] = 1.0;
                if !artificial.as_slice()[i] {
                    y[i * 3 + 2] = 1.0;
                }
            }
        }
        Ok(Sample {
            h,
            w,
            s_days: s,
            x,
            y,
            base,
            donor,
            doy,
        })
    }

    pub fn make_sample(&mut self) -> Result<Sample> {
        let s = self.sample_at(self.next_index)?;
        self.next_index += 1;
        Ok(s)
    }

    /// `n` consecutive samples, built in parallel.
    pub fn make_batch(&mut self, n: usize) -> Result<Vec<Sample>> {
        let start = self.next_index;
        let out = (start..start + n as u64)
            .into_par_iter()
            .map(|i| self.sample_at(i))
            .collect::<Result<Vec<_>>>()?;
        self.next_index += n as u64;
        Ok(out)
    }

    /// Temperature reconstruction from a network-space prediction of the
    /// current day.
    pub fn decode(&self, sample: &Sample, pred: &[f32]) -> Result<Vec<f32>> {
        let clim = self.clim.mean(sample.doy)?.as_slice();
        if let Some(e) = &self.cfg.embed {
            let (h, w) = self.ds.dims();
            let mut out = vec![f32::NAN; e.outer_h * e.outer_w];
            for r in 0..h {
                for c in 0..w {
                    let oi = (r + e.y0) * e.outer_w + c + e.x0;
                    out[oi] = self.norm.decode(pred[oi], clim[r * w + c]);
                }
            }
            return Ok(out);
        }
        Ok(pred.iter().zip(clim).map(|(&z, &c)| self.norm.decode(z, c)).collect())
    }
}

/// Number of cells where an occluded input channel carries anything other
/// than the fill value, or where the input reproduces a hidden truth value.
pub fn leak_count(sample: &Sample) -> usize {
    let mut leaks = 0;
    for i in 0..sample.h * sample.w {
        for k in 0..sample.s_days {
            if !sample.input_valid(k, i) && sample.x_at(i, 2 * k) != FILL {
                leaks += 1;
            }
        }
        if sample.diff(i) {
            let hidden = sample.truth(i);
            if sample.input_valid(0, i) || (hidden != FILL && sample.x_at(i, 0) == hidden) {
                leaks += 1;
            }
        }
    }
    leaks
}
