//! NaN-aware Gaussian interpolation (normalized convolution).
//!
//! Missing cells are zero-filled, the data and a 0/1 weight mask are blurred
//! with the same separable kernel, and the blurred data is divided by the
//! blurred weights. Cells whose weight stays at or below [`WEIGHT_FLOOR`]
//! remain missing. Land is treated exactly like a missing cell.
//!
//! Spatial edges use half-sample reflection (`d c b a | a b c d`); the
//! day-of-year axis of a climatology volume wraps around.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, MaskedField, MISSING};

/// Denominator floor for the final division.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    /// Spatial standard deviation, in grid cells.
    pub sigma_space: f64,
    /// Temporal standard deviation in days; 0 disables the time axis.
    pub sigma_time: f64,
    /// Kernel radius is `ceil(truncate * sigma)`.
    pub truncate: f64,
}

impl GaussianSpec {
    pub fn new(sigma_space: f64, sigma_time: f64, truncate: f64) -> Result<Self> {
        let spec = GaussianSpec {
            sigma_space,
            sigma_time,
            truncate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_space > 0.0) {
            return Err(Error::InvalidArgument("sigma_space must be > 0".into()));
        }
        if !(self.sigma_time >= 0.0) {
            return Err(Error::InvalidArgument("sigma_time must be >= 0".into()));
        }
        if !(self.truncate >= 2.0) {
            return Err(Error::InvalidArgument("truncate must be >= 2".into()));
        }
        Ok(())
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            sigma_space: 2.0,
            sigma_time: 3.0,
            truncate: 3.0,
        }
    }
}

/// Sampled 1-D Gaussian of radius `ceil(truncate * sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64, truncate: f64) -> Vec<f64> {
    let radius = (truncate * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Half-sample symmetric reflection.
    Reflect,
    /// Periodic.
    Wrap,
}

impl Boundary {
    #[inline]
    pub fn index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Boundary::Wrap => i.rem_euclid(n) as usize,
            Boundary::Reflect => {
                let period = 2 * n;
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - 1 - m }) as usize
            }
        }
    }
}

/// Convolve a `[d0, d1, d2]` row-major volume along `axis`.
fn convolve_axis(
    src: &[f64],
    dims: [usize; 3],
    axis: usize,
    kernel: &[f64],
    boundary: Boundary,
) -> Vec<f64> {
    let n = dims[axis];
    let radius = (kernel.len() / 2) as isize;
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    // Precompute the source offsets along the axis for every output position.
    let taps: Vec<Vec<(usize, f64)>> = (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &k)| (boundary.index(i + j as isize - radius, n), k))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; src.len()];
    let outer = src.len() / (n * stride);
    for o in 0..outer {
        let base = o * n * stride;
        for (i, tap) in taps.iter().enumerate() {
            let dst = &mut out[base + i * stride..base + i * stride + stride];
            for &(s, k) in tap {
                let row = &src[base + s * stride..base + s * stride + stride];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += k * v;
                }
            }
        }
    }
    out
}

/// Separable Gaussian blur of a `[t, h, w]` volume. `time` selects the kernel
/// and boundary for axis 0 (`None` leaves it untouched).
pub fn blur_volume(
    data: &[f64],
    dims: [usize; 3],
    sigma_space: f64,
    truncate: f64,
    time: Option<(f64, Boundary)>,
) -> Vec<f64> {
    let ks = gaussian_kernel(sigma_space, truncate);
    let mut out = convolve_axis(data, dims, 2, &ks, Boundary::Reflect);
    out = convolve_axis(&out, dims, 1, &ks, Boundary::Reflect);
    if let Some((sigma_t, boundary)) = time {
        if sigma_t > 0.0 && dims[0] > 1 {
            let kt = gaussian_kernel(sigma_t, truncate);
            out = convolve_axis(&out, dims, 0, &kt, boundary);
        }
    }
    out
}

/// Normalized convolution over a `[t, h, w]` volume. `known[i]` selects the
/// cells that carry information; values elsewhere are ignored. Returns the
/// interpolated values (NaN where the weight is at or below the floor) and the
/// blurred weights.
pub fn blur_nan_volume(
    values: &[f32],
    known: &[bool],
    dims: [usize; 3],
    spec: &GaussianSpec,
    time_boundary: Boundary,
) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(values.len(), dims.iter().product::<usize>());
    let zeroed: Vec<f64> = values
        .iter()
        .zip(known)
        .map(|(&v, &k)| if k { v as f64 } else { 0.0 })
        .collect();
    let mask: Vec<f64> = known.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    let time = Some((spec.sigma_time, time_boundary));
    let blurred = blur_volume(&zeroed, dims, spec.sigma_space, spec.truncate, time);
    let weights = blur_volume(&mask, dims, spec.sigma_space, spec.truncate, time);
    let out = blurred
        .iter()
        .zip(&weights)
        .map(|(&b, &w)| if w > WEIGHT_FLOOR { b / w } else { f64::NAN })
        .collect();
    (out, weights)
}

/// NaN-aware spatial Gaussian blur of one field (the time sigma is ignored).
///
/// Every sea cell whose kernel support touches at least one measurement
/// becomes valid; land stays missing.
pub fn gaussian_blur_nan(field: &MaskedField, spec: &GaussianSpec) -> Result<MaskedField> {
    spec.validate()?;
    if field.valid_count() == 0 {
        return Err(Error::NoValidCells);
    }
    let (h, w) = field.dims();
    let (out, _) = blur_nan_volume(
        field.values().as_slice(),
        field.valid().as_slice(),
        [1, h, w],
        &GaussianSpec {
            sigma_time: 0.0,
            ..*spec
        },
        Boundary::Reflect,
    );
    let land = field.land().clone();
    let mut values = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for (i, v) in out.into_iter().enumerate() {
        let ok = v.is_finite() && !land.as_slice()[i];
        valid.push(ok);
        values.push(if ok { v as f32 } else { MISSING });
    }
    MaskedField::new(Grid::from_vec(h, w, values)?, Grid::from_vec(h, w, valid)?, land)
}

/// Repeat the NaN-aware blur on the still-missing sea cells until every sea
/// cell is filled. Measured cells keep their values.
pub fn fill_gaps(
    field: &MaskedField,
    spec: &GaussianSpec,
    max_iterations: usize,
) -> Result<Grid<f32>> {
    let mut current = field.clone();
    for _ in 0..max_iterations {
        let missing = (0..current.values().len())
            .filter(|&i| current.is_sea(i) && !current.is_valid(i))
            .count();
        if missing == 0 {
            break;
        }
        let blurred = gaussian_blur_nan(&current, spec)?;
        let (h, w) = current.dims();
        let mut values = current.values().clone();
        let mut valid = current.valid().clone();
        for i in 0..h * w {
            if current.is_sea(i) && !current.is_valid(i) {
                if let Some(v) = blurred.value(i) {
                    values.as_mut_slice()[i] = v;
                    valid.as_mut_slice()[i] = true;
                }
            }
        }
        current = MaskedField::new(values, valid, current.land().clone())?;
    }
    let left = (0..current.values().len())
        .filter(|&i| current.is_sea(i) && !current.is_valid(i))
        .count();
    if left > 0 {
        return Err(Error::GapFillIncomplete(left));
    }
    Ok(current.values().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn open_sea(h: usize, w: usize) -> Arc<Grid<bool>> {
        Arc::new(Grid::filled(h, w, false))
    }

    /// Reflection written out case by case, for offsets within one period.
    fn reflect_oracle(i: isize, n: isize) -> usize {
        if i < 0 {
            (-i - 1) as usize
        } else if i >= n {
            (2 * n - 1 - i) as usize
        } else {
            i as usize
        }
    }

    #[test]
    fn kernel_is_normalized_and_sized() {
        let k = gaussian_kernel(1.5, 3.0);
        assert_eq!(k.len(), 2 * 5 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k[5] > k[4] && (k[4] - k[6]).abs() < 1e-15);
    }

    #[test]
    fn boundary_index_matches_oracle() {
        for n in 1..6isize {
            for i in -n..2 * n {
                assert_eq!(Boundary::Reflect.index(i, n as usize), reflect_oracle(i, n));
            }
        }
        assert_eq!(Boundary::Wrap.index(-1, 365), 364);
        assert_eq!(Boundary::Wrap.index(365, 365), 0);
    }

    #[test]
    fn single_missing_centre_matches_direct_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = Grid::from_fn(5, 5, |_, _| rng.random_range(10.0..20.0f32));
        let valid = Grid::from_fn(5, 5, |y, x| !(y == 2 && x == 2));
        let field = MaskedField::new(values.clone(), valid, open_sea(5, 5)).unwrap();
        let spec = GaussianSpec::new(1.0, 0.0, 3.0).unwrap();
        let out = gaussian_blur_nan(&field, &spec).unwrap();

        let g = |d: isize| (-(d * d) as f64 / 2.0).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for dy in -3isize..=3 {
            for dx in -3isize..=3 {
                let y = reflect_oracle(2 + dy, 5);
                let x = reflect_oracle(2 + dx, 5);
                if y == 2 && x == 2 {
                    continue;
                }
                let wgt = g(dy) * g(dx);
                num += wgt * *values.get(y, x) as f64;
                den += wgt;
            }
        }
        let got = out.values().get(2, 2);
        assert!((*got as f64 - num / den).abs() < 1e-5, "{got} vs {}", num / den);
    }

    #[test]
    fn constant_field_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let land = Arc::new(Grid::from_fn(24, 24, |y, x| x + y < 6));
        let valid = Grid::from_fn(24, 24, |y, x| !land.get(y, x) && rng.random_bool(0.3));
        let field = MaskedField::new(Grid::filled(24, 24, 7.0), valid, land).unwrap();
        let out = gaussian_blur_nan(&field, &GaussianSpec::default()).unwrap();
        for i in 0..out.values().len() {
            if let Some(v) = out.value(i) {
                assert!((v - 7.0).abs() < 1e-6);
            }
        }
        assert!(out.valid_count() > field.valid_count());
    }

    #[test]
    fn land_never_becomes_valid() {
        let land = Arc::new(Grid::from_fn(10, 10, |_, x| x < 3));
        let valid = Grid::from_fn(10, 10, |_, x| x >= 3);
        let field = MaskedField::new(Grid::filled(10, 10, 1.0), valid, land.clone()).unwrap();
        let out = gaussian_blur_nan(&field, &GaussianSpec::default()).unwrap();
        for i in 0..100 {
            assert_eq!(out.is_valid(i), !land.as_slice()[i]);
        }
    }

    #[test]
    fn isolated_gap_stays_missing_when_support_is_empty() {
        // Measurements only in the top-left corner; a tiny kernel cannot reach
        // the opposite corner.
        let valid = Grid::from_fn(16, 16, |y, x| y < 2 && x < 2);
        let field = MaskedField::new(Grid::filled(16, 16, 1.0), valid, open_sea(16, 16)).unwrap();
        let out = gaussian_blur_nan(&field, &GaussianSpec::new(0.5, 0.0, 2.0).unwrap()).unwrap();
        assert!(!out.is_valid(15 * 16 + 15));
        let filled = fill_gaps(&field, &GaussianSpec::new(0.5, 0.0, 2.0).unwrap(), 100).unwrap();
        assert!(filled.as_slice().iter().all(|v| (*v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn no_valid_cells_is_an_error() {
        let field = MaskedField::empty(open_sea(8, 8));
        assert!(gaussian_blur_nan(&field, &GaussianSpec::default()).is_err());
    }

    #[test]
    fn wrap_axis_treats_ends_as_neighbours() {
        // A spike in the last slice leaks into the first under wrap, not reflect.
        let dims = [6, 1, 1];
        let mut data = vec![0.0; 6];
        data[5] = 1.0;
        let wrapped = blur_volume(&data, dims, 0.01, 3.0, Some((1.0, Boundary::Wrap)));
        let reflected = blur_volume(&data, dims, 0.01, 3.0, Some((1.0, Boundary::Reflect)));
        assert!(wrapped[0] > 0.05);
        assert!(wrapped[0] > reflected[0]);
    }

    proptest! {
        #[test]
        fn missing_values_never_leak(seed in 0u64..1000, junk in -1e6f32..1e6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = Grid::from_fn(12, 12, |_, _| rng.random_range(0.0..30.0f32));
            let valid = Grid::from_fn(12, 12, |_, _| rng.random_bool(0.5));
            prop_assume!(valid.count() > 0);
            let spec = GaussianSpec::new(1.5, 0.0, 3.0).unwrap();
            let (a, _) = blur_nan_volume(values.as_slice(), valid.as_slice(), [1, 12, 12], &spec, Boundary::Reflect);
            let poisoned: Vec<f32> = values
                .as_slice()
                .iter()
                .zip(valid.as_slice())
                .map(|(&v, &k)| if k { v } else { junk })
                .collect();
            let (b, _) = blur_nan_volume(&poisoned, valid.as_slice(), [1, 12, 12], &spec, Boundary::Reflect);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.to_bits() == y.to_bits());
            }
        }

        #[test]
        fn output_is_bounded_by_known_values(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = Grid::from_fn(12, 12, |_, _| rng.random_range(0.0..30.0f32));
            let valid = Grid::from_fn(12, 12, |_, _| rng.random_bool(0.4));
            prop_assume!(valid.count() > 0);
            let field = MaskedField::new(values, valid, open_sea(12, 12)).unwrap();
            let spec = GaussianSpec::new(1.0, 0.0, 2.0).unwrap();
            let out = gaussian_blur_nan(&field, &spec).unwrap();
            let r = 2isize;
            for y in 0..12isize {
                for x in 0..12isize {
                    let Some(v) = out.value((y * 12 + x) as usize) else { continue };
                    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let yy = reflect_oracle(y + dy, 12);
                            let xx = reflect_oracle(x + dx, 12);
                            if let Some(k) = field.value(yy * 12 + xx) {
                                lo = lo.min(k);
                                hi = hi.max(k);
                            }
                        }
                    }
                    prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
                }
            }
        }
    }
}
