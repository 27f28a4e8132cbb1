//! Diff-mask RMSE harness.
//!
//! Every predictor returns temperatures on the dataset grid, one raster per
//! sample. Scores use only diff-mask cells (hidden in the input, observed in
//! truth), compared against the stored measurement.

use std::sync::Arc;

use serde::Serialize;
use sstfill_core::grid::Quadrant;
use sstfill_core::stats::SquaredError;
use sstfill_core::{Climatology, Dataset, Generator, GeneratorConfig, Sample};
use sstfill_nn::{Model, Tensor};

use crate::batch::Batch;
use crate::error::{Error, Result};

pub trait Predictor: Sync {
    fn name(&self) -> String;

    /// SST reconstruction of each sample's current day on the dataset grid.
    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>>;
}

/// Maps dataset-grid cells to sample raster cells (they differ for embedded
/// generators).
#[derive(Clone, Copy, Debug)]
pub struct CellMap {
    h: usize,
    w: usize,
    outer_w: usize,
    y0: usize,
    x0: usize,
}

impl CellMap {
    pub fn new(gen: &Generator) -> Self {
        let (h, w) = gen.dataset().dims();
        match gen.config().embed {
            Some(e) => CellMap {
                h,
                w,
                outer_w: e.outer_w,
                y0: e.y0,
                x0: e.x0,
            },
            None => CellMap {
                h,
                w,
                outer_w: w,
                y0: 0,
                x0: 0,
            },
        }
    }

    #[inline]
    pub fn outer(&self, i: usize) -> usize {
        (i / self.w + self.y0) * self.outer_w + i % self.w + self.x0
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Restrict a raster in sample coordinates to the dataset grid.
    pub fn crop(&self, outer: &[f32]) -> Vec<f32> {
        (0..self.cells()).map(|i| outer[self.outer(i)]).collect()
    }
}

/// A trained network: eval-mode forward, decoded back to temperatures.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub label: String,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model, label: impl Into<String>) -> Self {
        ModelPredictor {
            model,
            label: label.into(),
        }
    }
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        if self.model.is_oracle() {
            return OraclePredictor.predict(gen, samples);
        }
        let map = CellMap::new(gen);
        let batch = Batch::from_samples(samples)?;
        let out = self.model.predict(&batch.x)?;
        let n = out.len() / samples.len();
        samples
            .iter()
            .zip(out.data().chunks_exact(n))
            .map(|(s, z)| Ok(map.crop(&gen.decode(s, z)?)))
            .collect()
    }
}

/// Answers with the stored measurements; scores exactly zero.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        let ds = gen.dataset();
        Ok(samples
            .iter()
            .map(|s| ds.day(s.base).values().as_slice().to_vec())
            .collect())
    }
}

/// Four quadrant models answering a full-grid sample together.
pub struct QuadrantModels<'a> {
    pub models: [&'a Model; 4],
}

fn quadrant_tensor(x: &Tensor, q: Quadrant) -> Result<Tensor> {
    let [n, h, w, c] = x.shape().try_into().map_err(|_| Error::Config("expected NHWC".into()))?;
    let (y0, x0) = q.origin(h, w);
    let (qh, qw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * qh * qw * c);
    for b in 0..n {
        for r in 0..qh {
            let start = ((b * h + r + y0) * w + x0) * c;
            out.extend_from_slice(&x.data()[start..start + qw * c]);
        }
    }
    Ok(Tensor::new(&[n, qh, qw, c], out)?)
}

impl Predictor for QuadrantModels<'_> {
    fn name(&self) -> String {
        "quadrants".into()
    }

    fn predict(&self, gen: &Generator, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        if gen.config().embed.is_some() {
            return Err(Error::Config("quadrant models do not take embedded samples".into()));
        }
        let batch = Batch::from_samples(samples)?;
        let [n, h, w, _] = batch.x.shape().try_into().unwrap();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("{h}x{w} grid does not split into quadrants")));
        }
        let mut z = vec![0.0f32; n * h * w];
        for q in Quadrant::ALL {
            let part = self.models[q.index()].predict(&quadrant_tensor(&batch.x, q)?)?;
            let (y0, x0) = q.origin(h, w);
            let (qh, qw) = (h / 2, w / 2);
            for b in 0..n {
                for r in 0..qh {
                    let src = (b * qh + r) * qw;
                    let dst = (b * h + r + y0) * w + x0;
                    z[dst..dst + qw].copy_from_slice(&part.data()[src..src + qw]);
                }
            }
        }
        samples
            .iter()
            .zip(z.chunks_exact(h * w))
            .map(|(s, zi)| gen.decode(s, zi).map_err(Error::from))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MonthlyError {
    pub month: u32,
    pub samples: usize,
    pub cells: u64,
    /// `None` for months without samples.
    pub rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    /// Pooled over every diff-mask cell of every sample.
    pub rmse: f64,
    pub batch_rmse: Vec<f64>,
    /// Standard deviation of the per-batch RMSEs.
    pub batch_std: f64,
    pub cells: u64,
    pub samples: usize,
    pub monthly: Vec<MonthlyError>,
    /// Mean hidden sea fraction of the current-day input.
    pub mean_occlusion: f64,
}

struct Acc {
    total: SquaredError,
    batches: Vec<f64>,
    months: [(usize, SquaredError); 12],
}

fn score(
    gen: &Generator,
    map: &CellMap,
    samples: &[Sample],
    preds: &[Vec<f32>],
    acc: &mut Acc,
) -> Result<()> {
    if preds.len() != samples.len() {
        return Err(Error::Config("predictor returned the wrong number of rasters".into()));
    }
    let ds = gen.dataset();
    let mut batch = SquaredError::default();
    for (s, p) in samples.iter().zip(preds) {
        if p.len() != map.cells() {
            return Err(Error::Config(format!("prediction has {} cells, grid {}", p.len(), map.cells())));
        }
        let day = ds.day(s.base);
        let mut e = SquaredError::default();
        for (i, &pi) in p.iter().enumerate() {
            if !s.diff(map.outer(i)) {
                continue;
            }
            let truth = day.value(i).ok_or_else(|| Error::Config(format!("diff cell {i} has no truth")))?;
            if !pi.is_finite() {
                return Err(Error::Config(format!("non-finite prediction at diff cell {i}")));
            }
            e.push(pi as f64, truth as f64);
        }
        let m = &mut acc.months[ds.month(s.base) as usize - 1];
        m.0 += 1;
        m.1.merge(e);
        batch.merge(e);
    }
    acc.total.merge(batch);
    acc.batches.push(batch.rmse());
    Ok(())
}

/// The `n_batches × batch_size` samples at stream positions `0..`, in batches.
pub fn eval_batches(gen: &Generator, n_batches: usize, batch_size: usize) -> impl Iterator<Item = Result<Vec<Sample>>> + '_ {
    (0..n_batches).map(move |b| {
        let mut g = gen.clone();
        g.seek((b * batch_size) as u64);
        g.make_batch(batch_size).map_err(Error::from)
    })
}

/// Score several predictors on identical samples.
pub fn evaluate_many(
    predictors: &[&dyn Predictor],
    gen: &Generator,
    n_batches: usize,
    batch_size: usize,
) -> Result<Vec<EvalReport>> {
    if n_batches == 0 || batch_size == 0 {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    let map = CellMap::new(gen);
    let mut accs: Vec<Acc> = predictors
        .iter()
        .map(|_| Acc {
            total: SquaredError::default(),
            batches: Vec::new(),
            months: [(0, SquaredError::default()); 12],
        })
        .collect();
    let mut occlusion = 0.0;
    let mut count = 0usize;
    for samples in eval_batches(gen, n_batches, batch_size) {
        let samples = samples?;
        for s in &samples {
            occlusion += 1.0 - s.post_visible();
        }
        count += samples.len();
        for (p, acc) in predictors.iter().zip(&mut accs) {
            let preds = p.predict(gen, &samples)?;
            score(gen, &map, &samples, &preds, acc)?;
        }
    }
    Ok(predictors
        .iter()
        .zip(accs)
        .map(|(p, a)| {
            let mean = a.batches.iter().sum::<f64>() / a.batches.len() as f64;
            let var = a.batches.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / a.batches.len() as f64;
            EvalReport {
                name: p.name(),
                rmse: a.total.rmse(),
                batch_std: var.sqrt(),
                batch_rmse: a.batches,
                cells: a.total.n,
                samples: count,
                monthly: a
                    .months
                    .iter()
                    .enumerate()
                    .map(|(m, (n, e))| MonthlyError {
                        month: m as u32 + 1,
                        samples: *n,
                        cells: e.n,
                        rmse: (e.n > 0).then(|| e.rmse()),
                    })
                    .collect(),
                mean_occlusion: occlusion / count as f64,
            }
        })
        .collect())
}

pub fn evaluate_rmse(
    predictor: &dyn Predictor,
    gen: &Generator,
    n_batches: usize,
    batch_size: usize,
) -> Result<EvalReport> {
    Ok(evaluate_many(&[predictor], gen, n_batches, batch_size)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegradationPoint {
    pub donor_visible: (f64, f64),
    pub occlusion: f64,
    pub rmse: f64,
    pub samples: usize,
}

/// RMSE at several occlusion levels, each level a donor-visibility range of
/// the otherwise unchanged generator configuration.
pub fn degradation_curve(
    predictor: &dyn Predictor,
    ds: &Arc<Dataset>,
    clim: &Arc<Climatology>,
    base: &GeneratorConfig,
    levels: &[(f64, f64)],
    n_batches: usize,
    batch_size: usize,
) -> Result<Vec<DegradationPoint>> {
    levels
        .iter()
        .map(|&range| {
            let cfg = GeneratorConfig {
                donor_visible: range,
                ..base.clone()
            };
            let gen = Generator::new(ds.clone(), clim.clone(), cfg)?;
            let r = evaluate_rmse(predictor, &gen, n_batches, batch_size)?;
            Ok(DegradationPoint {
                donor_visible: range,
                occlusion: r.mean_occlusion,
                rmse: r.rmse,
                samples: r.samples,
            })
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadrantReport {
    /// NW, NE, SW, SE.
    pub reports: Vec<EvalReport>,
    /// Per-quadrant RMSE weighted by sample count.
    pub mean: f64,
    /// RMSE pooled over every diff cell of all quadrants.
    pub pooled: f64,
}

/// Each quadrant model scored on its own quadrant of the dataset, with the
/// same generator configuration.
pub fn quadrant_eval(
    predictors: [&dyn Predictor; 4],
    ds: &Dataset,
    clim: &Climatology,
    cfg: &GeneratorConfig,
    n_batches: usize,
    batch_size: usize,
) -> Result<QuadrantReport> {
    let mut reports = Vec::with_capacity(4);
    for q in Quadrant::ALL {
        let gen = Generator::new(Arc::new(ds.quadrant(q)?), Arc::new(clim.quadrant(q)?), cfg.clone())?;
        let mut r = evaluate_rmse(predictors[q.index()], &gen, n_batches, batch_size)?;
        r.name = format!("{}:{q}", r.name);
        reports.push(r);
    }
    let total: usize = reports.iter().map(|r| r.samples).sum();
    let mean = reports.iter().map(|r| r.rmse * r.samples as f64).sum::<f64>() / total as f64;
    let sse: f64 = reports.iter().map(|r| r.rmse * r.rmse * r.cells as f64).sum();
    let cells: u64 = reports.iter().map(|r| r.cells).sum();
    Ok(QuadrantReport {
        reports,
        mean,
        pooled: (sse / cells as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 45.0]), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn quadrant_tensor_extracts_block() {
        let x = Tensor::new(&[1, 4, 4, 1], (0..16).map(|v| v as f32).collect()).unwrap();
        assert_eq!(quadrant_tensor(&x, Quadrant::Ne).unwrap().data(), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(quadrant_tensor(&x, Quadrant::Sw).unwrap().data(), &[8.0, 9.0, 12.0, 13.0]);
    }
}
