//! Reference reconstructions that need no training.

use sstfill_core::blur::{fill_gaps, GaussianSpec};
use sstfill_core::{Generator, Grid, MaskedField, Sample};

use crate::error::Result;
use crate::eval::{evaluate_many, CellMap, EvalReport, Predictor};

/// The current day as the network sees it: measurements kept only where the
/// input mask is set.
pub fn observed_input(gen: &Generator, sample: &Sample) -> Result<MaskedField> {
    let map = CellMap::new(gen);
    let day = gen.dataset().day(sample.base);
    let (h, w) = day.dims();
    let keep = Grid::from_vec(h, w, (0..h * w).map(|i| sample.input_valid(0, map.outer(i))).collect())?;
    Ok(day.intersect(&keep)?)
}

/// Yesterday's measurement where it exists, climatology elsewhere.
pub struct Persistence1d;

impl Predictor for Persistence1d {
    fn name(&self) -> String {
        "persistence-1d".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        let (ds, clim) = (gen.dataset(), gen.climatology());
        samples
            .iter()
            .map(|s| {
                let c = clim.mean(s.doy)?.as_slice();
                Ok(match s.base.checked_sub(1) {
                    Some(t) => {
                        let prev = ds.day(t);
                        (0..c.len()).map(|i| prev.value(i).unwrap_or(c[i])).collect()
                    }
                    None => c.to_vec(),
                })
            })
            .collect()
    }
}

/// Day-of-year climatology.
pub struct ClimatologyBaseline;

impl Predictor for ClimatologyBaseline {
    fn name(&self) -> String {
        "climatology".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        samples
            .iter()
            .map(|s| Ok(gen.climatology().mean(s.doy)?.as_slice().to_vec()))
            .collect()
    }
}

/// Climatology offset to match the visible part of the current day.
pub struct ShiftedClimatology;

impl Predictor for ShiftedClimatology {
    fn name(&self) -> String {
        "shifted-climatology".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        samples
            .iter()
            .map(|s| {
                let obs = observed_input(gen, s)?;
                Ok(gen.climatology().shifted_baseline(&obs, s.doy)?.into_vec())
            })
            .collect()
    }
}

/// Visible anomalies spread into the gaps by repeated NaN-aware Gaussian
/// blurring, then climatology added back.
pub struct GaussianFill {
    pub spec: GaussianSpec,
    pub max_iterations: usize,
}

impl Default for GaussianFill {
    fn default() -> Self {
        GaussianFill {
            spec: GaussianSpec {
                sigma_time: 0.0,
                ..GaussianSpec::default()
            },
            max_iterations: 200,
        }
    }
}

impl Predictor for GaussianFill {
    fn name(&self) -> String {
        "gaussian-fill".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        let clim = gen.climatology();
        samples
            .iter()
            .map(|s| {
                let obs = observed_input(gen, s)?;
                let anom = clim.anomaly(&obs, s.doy)?;
                let filled = fill_gaps(&anom, &self.spec, self.max_iterations)?;
                Ok(clim.restore_raster(&filled, s.doy)?.into_vec())
            })
            .collect()
    }
}

/// The four reference baselines on the same samples.
pub fn baselines(gen: &Generator, n_batches: usize, batch_size: usize) -> Result<Vec<EvalReport>> {
    let gauss = GaussianFill::default();
    evaluate_many(
        &[&Persistence1d, &ClimatologyBaseline, &ShiftedClimatology, &gauss],
        gen,
        n_batches,
        batch_size,
    )
}
