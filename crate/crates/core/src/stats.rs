//! Dataset diagnostics: extrema, histograms, spatial and temporal gradients,
//! exceedance frequencies and persistence distances.
//!
//! All reductions read measured cells only and accumulate in f64. Per-day
//! partials are computed independently and merged in day order, so results do
//! not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climatology::Climatology;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub n_cells: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub max: f64,
    /// Mean over days of each day's largest gradient.
    pub avg_max: f64,
    pub mean: f64,
    pub std: f64,
    pub n_pairs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Spatial,
    Temporal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceStats {
    pub lag: usize,
    pub mad: f64,
    pub rmsd: f64,
    pub n_pairs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Bin `k` covers `[(first_bin + k) * bin_width, (first_bin + k + 1) * bin_width)`.
    pub first_bin: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn lower_edge(&self, k: usize) -> f64 {
        (self.first_bin + k as i64) as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Streaming sum of squared errors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SquaredError {
    pub sse: f64,
    pub n: u64,
}

impl SquaredError {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let d = pred - truth;
        self.sse += d * d;
        self.n += 1;
    }

    pub fn merge(&mut self, other: SquaredError) {
        self.sse += other.sse;
        self.n += other.n;
    }

    pub fn rmse(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.sse / self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct DiffAcc {
    n: u64,
    sum: f64,
    sum_sq: f64,
    max: f64,
}

impl Default for DiffAcc {
    fn default() -> Self {
        DiffAcc {
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
            max: 0.0,
        }
    }
}

impl DiffAcc {
    fn push(&mut self, d: f64) {
        self.n += 1;
        self.sum += d;
        self.sum_sq += d * d;
        if d > self.max {
            self.max = d;
        }
    }
}

/// Call `f(|a - b|)` for every measured right/down neighbour pair.
fn spatial_pairs(day: &MaskedField, mut f: impl FnMut(f64)) {
    let (h, w) = day.dims();
    let v = day.values().as_slice();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !day.is_valid(i) {
                continue;
            }
            if x + 1 < w && day.is_valid(i + 1) {
                f((v[i + 1] as f64 - v[i] as f64).abs());
            }
            if y + 1 < h && day.is_valid(i + w) {
                f((v[i + w] as f64 - v[i] as f64).abs());
            }
        }
    }
}

/// Call `f(|a - b|)` for every cell measured on both days.
fn paired_days(a: &MaskedField, b: &MaskedField, mut f: impl FnMut(f64)) {
    let (va, vb) = (a.values().as_slice(), b.values().as_slice());
    for i in 0..va.len() {
        if a.is_valid(i) && b.is_valid(i) {
            f((va[i] as f64 - vb[i] as f64).abs());
        }
    }
}

/// Days that own at least one pair: every day for spatial pairs, days with a
/// predecessor `lag` days earlier for temporal ones.
fn pair_days(ds: &Dataset, axis: Axis, lag: usize) -> std::ops::Range<usize> {
    match axis {
        Axis::Spatial => 0..ds.len(),
        Axis::Temporal => lag.min(ds.len())..ds.len(),
    }
}

fn visit_pairs(ds: &Dataset, axis: Axis, lag: usize, t: usize, f: impl FnMut(f64)) {
    match axis {
        Axis::Spatial => spatial_pairs(ds.day(t), f),
        Axis::Temporal => paired_days(ds.day(t), ds.day(t - lag), f),
    }
}

fn diff_partials(ds: &Dataset, axis: Axis, lag: usize) -> Vec<DiffAcc> {
    pair_days(ds, axis, lag)
        .into_par_iter()
        .map(|t| {
            let mut acc = DiffAcc::default();
            visit_pairs(ds, axis, lag, t, |d| acc.push(d));
            acc
        })
        .collect()
}

pub fn extrema(ds: &Dataset) -> Result<Extrema> {
    let parts: Vec<(f64, f64, f64, u64)> = ds
        .days()
        .par_iter()
        .map(|d| {
            let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0u64);
            for i in 0..d.values().len() {
                if let Some(v) = d.value(i) {
                    let v = v as f64;
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v;
                    n += 1;
                }
            }
            (lo, hi, sum, n)
        })
        .collect();
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0u64);
    for (a, b, s, c) in parts {
        lo = lo.min(a);
        hi = hi.max(b);
        sum += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::NoValidCells);
    }
    Ok(Extrema {
        min: lo,
        mean: sum / n as f64,
        max: hi,
        n_cells: n,
    })
}

fn gradient_stats(ds: &Dataset, axis: Axis) -> Result<GradientStats> {
    let parts = diff_partials(ds, axis, 1);
    let mut total = DiffAcc::default();
    let (mut max_sum, mut days) = (0.0, 0u64);
    for p in parts.iter().filter(|p| p.n > 0) {
        total.n += p.n;
        total.sum += p.sum;
        total.sum_sq += p.sum_sq;
        total.max = total.max.max(p.max);
        max_sum += p.max;
        days += 1;
    }
    if total.n == 0 {
        return Err(Error::NoValidCells);
    }
    let mean = total.sum / total.n as f64;
    Ok(GradientStats {
        max: total.max,
        avg_max: max_sum / days as f64,
        mean,
        std: (total.sum_sq / total.n as f64 - mean * mean).max(0.0).sqrt(),
        n_pairs: total.n,
    })
}

/// Absolute differences between measured right/down neighbours.
pub fn spatial_gradients(ds: &Dataset) -> Result<GradientStats> {
    gradient_stats(ds, Axis::Spatial)
}

/// Absolute differences at cells measured on two consecutive days.
pub fn temporal_gradients(ds: &Dataset) -> Result<GradientStats> {
    gradient_stats(ds, Axis::Temporal)
}

/// Fraction of gradient pairs strictly above each threshold, and the number
/// of pairs.
pub fn exceedance(ds: &Dataset, axis: Axis, thresholds: &[f64]) -> Result<(Vec<f64>, u64)> {
    let parts: Vec<(Vec<u64>, u64)> = pair_days(ds, axis, 1)
        .into_par_iter()
        .map(|t| {
            let mut counts = vec![0u64; thresholds.len()];
            let mut n = 0u64;
            visit_pairs(ds, axis, 1, t, |d| {
                n += 1;
                for (c, &thr) in counts.iter_mut().zip(thresholds) {
                    if d > thr {
                        *c += 1;
                    }
                }
            });
            (counts, n)
        })
        .collect();
    let mut counts = vec![0u64; thresholds.len()];
    let mut n = 0;
    for (c, m) in parts {
        n += m;
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    if n == 0 {
        return Err(Error::NoValidCells);
    }
    Ok((counts.into_iter().map(|c| c as f64 / n as f64).collect(), n))
}

/// Mean absolute and root-mean-square difference between each day and the
/// day `lag` earlier, over cells measured on both.
pub fn persistence(ds: &Dataset, lag: usize) -> Result<PersistenceStats> {
    if lag == 0 {
        return Err(Error::InvalidArgument("persistence lag must be >= 1".into()));
    }
    let parts = diff_partials(ds, Axis::Temporal, lag);
    let (mut n, mut sum, mut sq) = (0u64, 0.0, 0.0);
    for p in parts {
        n += p.n;
        sum += p.sum;
        sq += p.sum_sq;
    }
    if n == 0 {
        return Err(Error::NoValidCells);
    }
    Ok(PersistenceStats {
        lag,
        mad: sum / n as f64,
        rmsd: (sq / n as f64).sqrt(),
        n_pairs: n,
    })
}

pub fn histogram(ds: &Dataset, bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidArgument("bin width must be > 0".into()));
    }
    let ext = extrema(ds)?;
    let first = (ext.min / bin_width).floor() as i64;
    let last = (ext.max / bin_width).floor() as i64;
    let nbins = (last - first + 1) as usize;
    let parts: Vec<Vec<u64>> = ds
        .days()
        .par_iter()
        .map(|d| {
            let mut c = vec![0u64; nbins];
            for i in 0..d.values().len() {
                if let Some(v) = d.value(i) {
                    let k = ((v as f64 / bin_width).floor() as i64 - first) as usize;
                    c[k] += 1;
                }
            }
            c
        })
        .collect();
    let mut counts = vec![0u64; nbins];
    for p in parts {
        counts.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    Ok(Histogram {
        bin_width,
        first_bin: first,
        counts,
    })
}

/// Squared error of a dense prediction against a field's measurements,
/// restricted to `mask`.
pub fn masked_error(pred: &Grid<f32>, truth: &MaskedField, mask: &Grid<bool>) -> Result<SquaredError> {
    if pred.dims() != truth.dims() || mask.dims() != truth.dims() {
        return Err(Error::shape(
            format!("{:?}", truth.dims()),
            format!("pred {:?}, mask {:?}", pred.dims(), mask.dims()),
        ));
    }
    let mut acc = SquaredError::default();
    for i in 0..pred.len() {
        if mask.as_slice()[i] {
            let t = truth.value(i).ok_or_else(|| {
                Error::InvalidArgument(format!("mask selects unmeasured cell {i}"))
            })?;
            acc.push(pred.as_slice()[i] as f64, t as f64);
        }
    }
    Ok(acc)
}

/// Error of the plain climatology at the masked cells of the listed days.
pub fn climatology_error(
    ds: &Dataset,
    clim: &Climatology,
    cases: &[(usize, Grid<bool>)],
) -> Result<SquaredError> {
    let mut acc = SquaredError::default();
    for (t, mask) in cases {
        acc.merge(masked_error(clim.mean(ds.doy(*t))?, ds.day(*t), mask)?);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::sync::Arc;

    fn dataset(n: usize, h: usize, w: usize, value: impl Fn(usize, usize, usize) -> f32) -> Dataset {
        let land = Arc::new(Grid::from_fn(h, w, |y, x| y == 0 && x == 0));
        let days = (0..n)
            .map(|t| MaskedField::from_values(Grid::from_fn(h, w, |y, x| value(t, y, x)), land.clone()).unwrap())
            .collect();
        Dataset::new("s", NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(), land, days).unwrap()
    }

    #[test]
    fn constant_dataset() {
        let ds = dataset(4, 8, 8, |_, _, _| 3.5);
        let e = extrema(&ds).unwrap();
        assert_eq!((e.min, e.mean, e.max), (3.5, 3.5, 3.5));
        let hist = histogram(&ds, 0.5).unwrap();
        assert_eq!(hist.counts, vec![4 * 63]);
        let t = temporal_gradients(&ds).unwrap();
        assert_eq!((t.max, t.avg_max, t.mean, t.std), (0.0, 0.0, 0.0, 0.0));
        let p = persistence(&ds, 1).unwrap();
        assert_eq!((p.mad, p.rmsd), (0.0, 0.0));
    }

    #[test]
    fn linear_ramp_gradients() {
        // 0.1 per cell along x, constant along y: right pairs give 0.1, down pairs 0.
        let ds = dataset(2, 8, 8, |_, _, x| 0.1 * x as f32);
        let g = spatial_gradients(&ds).unwrap();
        assert!((g.max - 0.1).abs() < 1e-6);
        let (fr, n) = exceedance(&ds, Axis::Spatial, &[0.0, 0.05, 0.2]).unwrap();
        assert_eq!(n, g.n_pairs);
        // Right pairs: 7 per row (row 0 loses one to the land corner).
        let right = 2 * (7 * 8 - 1);
        assert_eq!(fr[0], right as f64 / n as f64);
        assert_eq!(fr[1], fr[0]);
        assert_eq!(fr[2], 0.0);
    }

    #[test]
    fn lag_zero_is_rejected() {
        let ds = dataset(3, 8, 8, |_, _, _| 1.0);
        assert!(persistence(&ds, 0).is_err());
    }

    #[test]
    fn invalid_cell_values_are_ignored() {
        let a = dataset(5, 8, 8, |t, y, x| if (t + x) % 3 == 0 { f32::NAN } else { (t * y + x) as f32 * 0.1 });
        let s = spatial_gradients(&a).unwrap();
        let p = persistence(&a, 2).unwrap();
        assert!(s.max >= s.avg_max && s.avg_max >= s.mean && s.mean >= 0.0);
        assert!(p.rmsd >= p.mad);
    }

    #[test]
    fn squared_error_rmse() {
        let mut e = SquaredError::default();
        e.push(1.0, 0.0);
        e.push(-1.0, 0.0);
        assert_eq!(e.rmse(), 1.0);
        assert!(SquaredError::default().rmse().is_nan());
    }
}
