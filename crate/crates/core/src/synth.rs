//! Deterministic synthetic SST-like datasets.
//!
//! Temperature is a seasonal cycle on top of a static pattern (north-south
//! gradient plus a cooler band along the coast) and a spatially smooth
//! anomaly that evolves as a first-order autoregressive process in time.
//! Clouds come from a second autoregressive smooth noise field, mixed with a
//! domain-wide daily component so that some days are almost clear and others
//! almost fully covered, and thresholded to the configured mean cover.

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::blur::{blur_volume, gaussian_kernel};
use crate::dataset::{doy_slot, Dataset, MIN_GRID};
use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField, MISSING};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub n_years: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
    /// Domain mean temperature, °C.
    pub mean_sst: f64,
    /// Amplitude of the seasonal sinusoid, °C.
    pub seasonal_amp: f64,
    /// Day of year of the seasonal maximum.
    pub seasonal_peak_doy: f64,
    /// Total north-to-south temperature increase across the grid, °C.
    pub meridional_gradient: f64,
    /// Standard deviation of the anomaly process, °C.
    pub anomaly_std: f64,
    /// Spatial correlation length of the anomaly, cells.
    pub spatial_corr_len: f64,
    /// e-folding time of the anomaly, days.
    pub temporal_corr_days: f64,
    /// Mean fraction of sea covered by clouds.
    pub cloud_cover_mean: f64,
    pub cloud_corr_len: f64,
    pub cloud_corr_days: f64,
    /// Share of cloud variance carried by the domain-wide daily component.
    pub cloud_day_weight: f64,
    /// Fraction of the grid that is land.
    pub coast_fraction: f64,
    /// Cooling right at the coast, decaying offshore, °C.
    pub coastal_band_amp: f64,
    pub coastal_band_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            h: 64,
            w: 64,
            n_years: 10,
            start_date: NaiveDate::from_ymd_opt(2002, 1, 1).expect("valid date"),
            seed: 42,
            mean_sst: 19.0,
            seasonal_amp: 5.0,
            seasonal_peak_doy: 225.0,
            meridional_gradient: 3.0,
            anomaly_std: 0.6,
            spatial_corr_len: 6.0,
            temporal_corr_days: 4.0,
            cloud_cover_mean: 0.54,
            cloud_corr_len: 4.0,
            cloud_corr_days: 1.5,
            cloud_day_weight: 0.4,
            coast_fraction: 0.15,
            coastal_band_amp: 1.0,
            coastal_band_width: 4.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.h < MIN_GRID || self.w < MIN_GRID {
            return bad("grid must be at least 8x8");
        }
        if self.n_years == 0 {
            return bad("n_years must be positive");
        }
        if !(self.cloud_cover_mean > 0.0 && self.cloud_cover_mean < 1.0) {
            return bad("cloud_cover_mean must lie in (0, 1)");
        }
        if !(self.coast_fraction >= 0.0 && self.coast_fraction < 0.9) {
            return bad("coast_fraction must lie in [0, 0.9)");
        }
        if !(self.spatial_corr_len > 0.0
            && self.temporal_corr_days > 0.0
            && self.cloud_corr_len > 0.0
            && self.cloud_corr_days > 0.0)
        {
            return bad("correlation scales must be positive");
        }
        if !(self.anomaly_std >= 0.0 && self.seasonal_amp >= 0.0) {
            return bad("amplitudes must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.cloud_day_weight) {
            return bad("cloud_day_weight must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        let end = NaiveDate::from_ymd_opt(
            chrono::Datelike::year(&self.start_date) + self.n_years as i32,
            chrono::Datelike::month(&self.start_date),
            chrono::Datelike::day(&self.start_date).min(28),
        )
        .expect("valid date");
        (end - self.start_date).num_days() as usize
    }
}

/// Unit-variance, spatially correlated Gaussian noise.
struct SmoothNoise {
    h: usize,
    w: usize,
    sigma: f64,
    scale: f64,
}

impl SmoothNoise {
    fn new(h: usize, w: usize, sigma: f64) -> Self {
        // Interior variance of separably blurred white noise is (Σk²)².
        let k = gaussian_kernel(sigma, 3.0);
        let s2: f64 = k.iter().map(|v| v * v).sum();
        SmoothNoise {
            h,
            w,
            sigma,
            scale: 1.0 / s2,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let white: Vec<f64> = (0..self.h * self.w)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut out = blur_volume(&white, [1, self.h, self.w], self.sigma, 3.0, None);
        out.iter_mut().for_each(|v| *v *= self.scale);
        out
    }
}

/// First-order autoregressive evolution of a unit-variance smooth field.
struct ArField {
    noise: SmoothNoise,
    phi: f64,
    state: Vec<f64>,
}

impl ArField {
    fn new(h: usize, w: usize, sigma: f64, e_fold_days: f64, rng: &mut impl Rng) -> Self {
        let noise = SmoothNoise::new(h, w, sigma);
        let state = noise.sample(rng);
        ArField {
            noise,
            phi: (-1.0 / e_fold_days).exp(),
            state,
        }
    }

    fn step(&mut self, rng: &mut impl Rng) -> &[f64] {
        let innov = self.noise.sample(rng);
        let c = (1.0 - self.phi * self.phi).sqrt();
        for (s, e) in self.state.iter_mut().zip(innov) {
            *s = self.phi * *s + c * e;
        }
        &self.state
    }
}

/// Sequential cloud-mask generator: visible where the mixed noise exceeds
/// `threshold`.
pub struct CloudModel {
    field: ArField,
    day_phi: f64,
    day_state: f64,
    day_weight: f64,
    land: Arc<Grid<bool>>,
    pub threshold: f64,
}

impl CloudModel {
    pub fn new(cfg: &SynthConfig, land: Arc<Grid<bool>>, rng: &mut impl Rng) -> Self {
        let (h, w) = land.dims();
        let field = ArField::new(h, w, cfg.cloud_corr_len, cfg.cloud_corr_days, rng);
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        CloudModel {
            field,
            day_phi: (-1.0 / cfg.cloud_corr_days).exp(),
            day_state: rng.sample(StandardNormal),
            day_weight: cfg.cloud_day_weight,
            land,
            threshold: normal.inverse_cdf(cfg.cloud_cover_mean),
        }
    }

    /// Advance one day and return the valid (cloud-free sea) mask.
    pub fn next_mask(&mut self, rng: &mut impl Rng) -> Grid<bool> {
        let e: f64 = rng.sample(StandardNormal);
        self.day_state = self.day_phi * self.day_state + (1.0 - self.day_phi * self.day_phi).sqrt() * e;
        let (a, b) = ((1.0 - self.day_weight).sqrt(), self.day_weight.sqrt());
        let day = b * self.day_state;
        let thr = self.threshold;
        let field = self.field.step(rng);
        let (h, w) = self.land.dims();
        let data = field
            .iter()
            .zip(self.land.as_slice())
            .map(|(&c, &l)| !l && a * c + day > thr)
            .collect();
        Grid::from_vec(h, w, data).expect("consistent dims")
    }
}

/// Land occupies a strip along the western edge with a smooth, wiggly
/// coastline; returns the mask and the coastline column per row.
fn make_land(cfg: &SynthConfig, rng: &mut impl Rng) -> (Grid<bool>, Vec<f64>) {
    let (h, w) = (cfg.h, cfg.w);
    let white: Vec<f64> = (0..h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sigma = (h as f64 / 8.0).max(1.0);
    let smooth = blur_volume(&white, [1, h, 1], sigma, 3.0, None);
    let scale = smooth.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let base = cfg.coast_fraction * w as f64;
    let amp = if cfg.coast_fraction > 0.0 { 0.1 * w as f64 } else { 0.0 };
    let coast: Vec<f64> = smooth
        .iter()
        .map(|v| (base + amp * v / scale).clamp(0.0, 0.9 * w as f64))
        .collect();
    let land = Grid::from_fn(h, w, |y, x| (x as f64) + 0.5 < coast[y]);
    (land, coast)
}

/// Generate a synthetic dataset. Same config, same bits.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.h, cfg.w);
    let (land, coast) = make_land(cfg, &mut rng);
    let land = Arc::new(land);
    if land.as_slice().iter().all(|&l| l) {
        return Err(Error::InvalidArgument("synthetic grid has no sea".into()));
    }

    let static_pattern = Grid::from_fn(h, w, |y, x| {
        let north_south = cfg.meridional_gradient * (y as f64 / (h - 1).max(1) as f64 - 0.5);
        let offshore = (x as f64 + 0.5 - coast[y]).max(0.0);
        let band = -cfg.coastal_band_amp * (-offshore / cfg.coastal_band_width.max(1e-9)).exp();
        cfg.mean_sst + north_south + band
    });

    let mut anomaly = ArField::new(h, w, cfg.spatial_corr_len, cfg.temporal_corr_days, &mut rng);
    let mut clouds = CloudModel::new(cfg, land.clone(), &mut rng);

    let n = cfg.n_days();
    let mut days = Vec::with_capacity(n);
    for t in 0..n {
        let date = cfg.start_date + chrono::Duration::days(t as i64);
        let phase = 2.0 * PI * (doy_slot(date) as f64 - cfg.seasonal_peak_doy) / 365.0;
        let seasonal = cfg.seasonal_amp * phase.cos();
        let anom = anomaly.step(&mut rng);
        let valid = clouds.next_mask(&mut rng);
        let values = Grid::from_fn(h, w, |y, x| {
            let i = y * w + x;
            if valid.as_slice()[i] {
                (static_pattern.get(y, x) + seasonal + cfg.anomaly_std * anom[i]) as f32
            } else {
                MISSING
            }
        });
        days.push(MaskedField::new(values, valid, land.clone())?);
    }
    let provenance = serde_json::json!({ "synthetic": cfg });
    Ok(Dataset::new(format!("synthetic-{}x{}-s{}", h, w, cfg.seed), cfg.start_date, land, days)?
        .with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            h: 16,
            w: 16,
            n_years: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_amplitudes_give_a_constant_field() {
        let cfg = SynthConfig {
            seasonal_amp: 0.0,
            anomaly_std: 0.0,
            meridional_gradient: 0.0,
            coastal_band_amp: 0.0,
            ..small()
        };
        let ds = gen_dataset(&cfg).unwrap();
        for d in ds.days() {
            for i in 0..d.values().len() {
                if let Some(v) = d.value(i) {
                    assert_eq!(v, 19.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = gen_dataset(&small()).unwrap();
        let b = gen_dataset(&small()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = gen_dataset(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn sea_values_finite_and_land_never_valid() {
        let ds = gen_dataset(&small()).unwrap();
        let land_cells = ds.land().count();
        assert!(land_cells > 0 && land_cells < 16 * 16 / 2);
        for d in ds.days() {
            for i in 0..d.values().len() {
                if d.is_valid(i) {
                    assert!(d.values().as_slice()[i].is_finite());
                    assert!(d.is_sea(i));
                }
            }
        }
    }

    #[test]
    fn coast_is_connected_to_the_western_edge() {
        let ds = gen_dataset(&SynthConfig { h: 32, w: 32, ..small() }).unwrap();
        for y in 0..32 {
            let row: Vec<bool> = (0..32).map(|x| *ds.land().get(y, x)).collect();
            let first_sea = row.iter().position(|&l| !l).unwrap();
            assert!(row[first_sea..].iter().all(|&l| !l), "row {y} has an enclave");
        }
    }

    #[test]
    fn extreme_thresholds() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let land = Arc::new(Grid::filled(16, 16, false));
        let mut m = CloudModel::new(&cfg, land, &mut rng);
        m.threshold = f64::NEG_INFINITY;
        assert_eq!(m.next_mask(&mut rng).count(), 256);
        m.threshold = f64::INFINITY;
        assert_eq!(m.next_mask(&mut rng).count(), 0);
    }

    #[test]
    fn cloud_cover_matches_configuration() {
        let cfg = SynthConfig { h: 32, w: 32, ..SynthConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let land = Arc::new(Grid::filled(32, 32, false));
        let mut m = CloudModel::new(&cfg, land, &mut rng);
        let mut visible = 0usize;
        for _ in 0..1000 {
            visible += m.next_mask(&mut rng).count();
        }
        let frac = visible as f64 / (1000.0 * 1024.0);
        assert!((frac - (1.0 - cfg.cloud_cover_mean)).abs() < 0.05, "visible {frac}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(gen_dataset(&SynthConfig { h: 4, ..small() }).is_err());
        assert!(gen_dataset(&SynthConfig { cloud_cover_mean: 1.0, ..small() }).is_err());
    }
}
