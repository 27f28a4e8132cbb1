//! Raster containers and mask-aware field operations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value stored at cells without a measurement. Never read by reductions:
/// every reduction is guarded by the validity mask.
pub const MISSING: f32 = f32::NAN;

/// Dense row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Grid {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("{h}x{w} = {}", h * w), data.len()));
        }
        Ok(Grid { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Grid { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.w + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Grid<T>> {
        if y0 + h > self.h || x0 + w > self.w {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.w + x0..y * self.w + x0 + w]);
        }
        Ok(Grid { h, w, data })
    }

    /// Copy `src` into `self` with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, y0: usize, x0: usize, src: &Grid<T>) -> Result<()> {
        if y0 + src.h > self.h || x0 + src.w > self.w {
            return Err(Error::InvalidArgument(format!(
                "paste {}x{} at ({y0},{x0}) exceeds {}x{}",
                src.h, src.w, self.h, self.w
            )));
        }
        for y in 0..src.h {
            let dst = (y0 + y) * self.w + x0;
            self.data[dst..dst + src.w].clone_from_slice(&src.data[y * src.w..(y + 1) * src.w]);
        }
        Ok(())
    }

    /// Split into NW, NE, SW, SE quadrants.
    pub fn split_quadrants(&self) -> Result<[Grid<T>; 4]> {
        if self.h % 2 != 0 || self.w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "quadrant split needs even dimensions, got {}x{}",
                self.h, self.w
            )));
        }
        let (qh, qw) = (self.h / 2, self.w / 2);
        Ok(Quadrant::ALL.map(|q| {
            let (y0, x0) = q.origin(self.h, self.w);
            self.crop(y0, x0, qh, qw).expect("quadrant inside grid")
        }))
    }

    pub fn join_quadrants(parts: &[Grid<T>; 4]) -> Result<Grid<T>> {
        let (qh, qw) = parts[0].dims();
        if parts.iter().any(|p| p.dims() != (qh, qw)) {
            return Err(Error::shape(
                format!("four {qh}x{qw} quadrants"),
                "quadrants of unequal size",
            ));
        }
        let (h, w) = (qh * 2, qw * 2);
        let mut out = Grid {
            h,
            w,
            data: Vec::with_capacity(h * w),
        };
        for y in 0..h {
            let (left, right) = if y < qh {
                (&parts[0], &parts[1])
            } else {
                (&parts[2], &parts[3])
            };
            let row = y % qh;
            out.data
                .extend_from_slice(&left.data[row * qw..(row + 1) * qw]);
            out.data
                .extend_from_slice(&right.data[row * qw..(row + 1) * qw]);
        }
        Ok(out)
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// One of the four equal tiles of an even-sized grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrant {
    Nw,
    Ne,
    Sw,
    Se,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Nw, Quadrant::Ne, Quadrant::Sw, Quadrant::Se];

    /// Top-left corner of this quadrant inside an `h`x`w` grid.
    pub fn origin(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Quadrant::Nw => (0, 0),
            Quadrant::Ne => (0, w / 2),
            Quadrant::Sw => (h / 2, 0),
            Quadrant::Se => (h / 2, w / 2),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::Nw => "nw",
            Quadrant::Ne => "ne",
            Quadrant::Sw => "sw",
            Quadrant::Se => "se",
        })
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nw" => Ok(Quadrant::Nw),
            "ne" => Ok(Quadrant::Ne),
            "sw" => Ok(Quadrant::Sw),
            "se" => Ok(Quadrant::Se),
            other => Err(Error::InvalidArgument(format!("unknown quadrant {other:?}"))),
        }
    }
}

/// One day of gridded SST with its measurement mask and the land/sea mask.
///
/// Invariants, checked on construction: a valid cell is never land, and every
/// invalid cell stores [`MISSING`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedField {
    values: Grid<f32>,
    valid: Grid<bool>,
    land: Arc<Grid<bool>>,
}

impl MaskedField {
    pub fn new(values: Grid<f32>, valid: Grid<bool>, land: Arc<Grid<bool>>) -> Result<Self> {
        if values.dims() != valid.dims() || values.dims() != land.dims() {
            return Err(Error::shape(
                format!("{:?}", values.dims()),
                format!("valid {:?}, land {:?}", valid.dims(), land.dims()),
            ));
        }
        if valid
            .as_slice()
            .iter()
            .zip(land.as_slice())
            .any(|(&v, &l)| v && l)
        {
            return Err(Error::InvalidArgument(
                "valid_mask marks a land cell as measured".into(),
            ));
        }
        let mut values = values;
        for (v, &ok) in values.as_mut_slice().iter_mut().zip(valid.as_slice()) {
            if !ok {
                *v = MISSING;
            } else if !v.is_finite() {
                return Err(Error::InvalidArgument(
                    "non-finite value at a valid cell".into(),
                ));
            }
        }
        Ok(MaskedField {
            values,
            valid,
            land,
        })
    }

    /// Build from raw values: a cell is valid when it is finite and not land.
    pub fn from_values(values: Grid<f32>, land: Arc<Grid<bool>>) -> Result<Self> {
        if values.dims() != land.dims() {
            return Err(Error::shape(
                format!("{:?}", land.dims()),
                format!("{:?}", values.dims()),
            ));
        }
        let valid = Grid::from_vec(
            values.h(),
            values.w(),
            values
                .as_slice()
                .iter()
                .zip(land.as_slice())
                .map(|(v, &l)| v.is_finite() && !l)
                .collect(),
        )?;
        MaskedField::new(values, valid, land)
    }

    /// A field with no measurements at all.
    pub fn empty(land: Arc<Grid<bool>>) -> Self {
        let (h, w) = land.dims();
        MaskedField {
            values: Grid::filled(h, w, MISSING),
            valid: Grid::filled(h, w, false),
            land,
        }
    }

    pub fn h(&self) -> usize {
        self.values.h()
    }

    pub fn w(&self) -> usize {
        self.values.w()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn values(&self) -> &Grid<f32> {
        &self.values
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn land(&self) -> &Arc<Grid<bool>> {
        &self.land
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_slice()[i]
    }

    #[inline]
    pub fn is_sea(&self, i: usize) -> bool {
        !self.land.as_slice()[i]
    }

    /// Value at flat index `i`, or `None` when unmeasured.
    #[inline]
    pub fn value(&self, i: usize) -> Option<f32> {
        self.is_valid(i).then(|| self.values.as_slice()[i])
    }

    pub fn sea_count(&self) -> usize {
        self.land.as_slice().iter().filter(|&&l| !l).count()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    /// Fraction of sea cells carrying a measurement.
    pub fn visible_sea_fraction(&self) -> Result<f64> {
        visible_fraction(&self.valid, &self.land)
    }

    /// Restrict the measurement mask to `keep` (cells outside become missing).
    pub fn intersect(&self, keep: &Grid<bool>) -> Result<MaskedField> {
        if keep.dims() != self.dims() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", keep.dims()),
            ));
        }
        let valid = Grid::from_vec(
            self.h(),
            self.w(),
            self.valid
                .as_slice()
                .iter()
                .zip(keep.as_slice())
                .map(|(&a, &b)| a && b)
                .collect(),
        )?;
        MaskedField::new(self.values.clone(), valid, self.land.clone())
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<MaskedField> {
        Ok(MaskedField {
            values: self.values.crop(y0, x0, h, w)?,
            valid: self.valid.crop(y0, x0, h, w)?,
            land: Arc::new(self.land.crop(y0, x0, h, w)?),
        })
    }
}

/// `|valid ∧ sea| / |sea|`.
pub fn visible_fraction(valid: &Grid<bool>, land: &Grid<bool>) -> Result<f64> {
    if valid.dims() != land.dims() {
        return Err(Error::shape(
            format!("{:?}", land.dims()),
            format!("{:?}", valid.dims()),
        ));
    }
    let mut sea = 0usize;
    let mut seen = 0usize;
    for (&v, &l) in valid.as_slice().iter().zip(land.as_slice()) {
        if !l {
            sea += 1;
            if v {
                seen += 1;
            }
        }
    }
    if sea == 0 {
        return Err(Error::NoSeaCells);
    }
    Ok(seen as f64 / sea as f64)
}

/// Merge a dense reconstruction with observations: measured cells pass
/// through unchanged, unmeasured sea cells take the reconstruction, land stays
/// missing. The result is valid over the whole sea.
pub fn composite(reconstruction: &Grid<f32>, observed: &MaskedField) -> Result<MaskedField> {
    if reconstruction.dims() != observed.dims() {
        return Err(Error::shape(
            format!("{:?}", observed.dims()),
            format!("{:?}", reconstruction.dims()),
        ));
    }
    let land = observed.land().clone();
    let mut values = Vec::with_capacity(reconstruction.len());
    let mut valid = Vec::with_capacity(reconstruction.len());
    for i in 0..reconstruction.len() {
        if !observed.is_sea(i) {
            values.push(MISSING);
            valid.push(false);
        } else {
            let v = observed
                .value(i)
                .unwrap_or(reconstruction.as_slice()[i]);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "reconstruction is not finite at sea cell {i}"
                )));
            }
            values.push(v);
            valid.push(true);
        }
    }
    let (h, w) = observed.dims();
    MaskedField::new(Grid::from_vec(h, w, values)?, Grid::from_vec(h, w, valid)?, land)
}

pub fn split_quadrants(field: &MaskedField) -> Result<[MaskedField; 4]> {
    let values = field.values.split_quadrants()?;
    let valid = field.valid.split_quadrants()?;
    let land = field.land.split_quadrants()?;
    let mut out = Vec::with_capacity(4);
    for ((v, m), l) in values.into_iter().zip(valid).zip(land) {
        out.push(MaskedField {
            values: v,
            valid: m,
            land: Arc::new(l),
        });
    }
    Ok(out.try_into().expect("four quadrants"))
}

pub fn join_quadrants(parts: &[MaskedField; 4]) -> Result<MaskedField> {
    let values = Grid::join_quadrants(&parts.each_ref().map(|p| p.values.clone()))?;
    let valid = Grid::join_quadrants(&parts.each_ref().map(|p| p.valid.clone()))?;
    let land = Grid::join_quadrants(&parts.each_ref().map(|p| (*p.land).clone()))?;
    Ok(MaskedField {
        values,
        valid,
        land: Arc::new(land),
    })
}
