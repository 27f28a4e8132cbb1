//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line to
//! stderr (uncaptured) and the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::World;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sstfill_core::blur::{gaussian_blur_nan, GaussianSpec};
use sstfill_core::grid::{join_quadrants, split_quadrants};
use sstfill_core::maskgen::leak_count;
use sstfill_core::stats::{self, Axis};
use sstfill_core::{gen_dataset, Dataset, Generator, GeneratorConfig, Grid, MaskedField, Mode, SynthConfig};
use sstfill_nn::gradcheck::{op_suite, TOLERANCE};
use sstfill_nn::{AdamWConfig, Checkpoint, Model, ModelConfig, UNetConfig};
use sstfill_train::baselines::{ClimatologyBaseline, Persistence1d};
use sstfill_train::eval::{degradation_curve, rank_correlation};
use sstfill_train::{evaluate_many, evaluate_rmse, fit, FitOptions, FitOutcome, ModelPredictor, TrainConfig};

const TEST_BATCHES: usize = 50;
const BATCH: usize = 32;
const TEST_SEED: u64 = 13;
const ALT_TEST_SEED: u64 = 14;

fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Runner {
    results: Vec<(u32, bool, String)>,
}

impl Runner {
    fn run(&mut self, id: u32, title: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (ok, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let line = format!(
            "C{id:<2} {} {title}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        say(&line);
        self.results.push((id, ok, line));
    }
}

// Dense reference implementation for the blur criteria.

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn dense_nan_blur(values: &[f64], valid: &[bool], h: usize, w: usize, sigma: f64, truncate: f64) -> Vec<Option<f64>> {
    let r = (truncate * sigma).ceil() as isize;
    let mut out = vec![None; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let k = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                    let j = reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w);
                    if valid[j] {
                        num += k * values[j];
                        den += k;
                    }
                }
            }
            if den > 0.0 {
                out[y * w + x] = Some(num / den);
            }
        }
    }
    out
}

fn open_sea(h: usize, w: usize) -> Arc<Grid<bool>> {
    Arc::new(Grid::filled(h, w, false))
}

fn criterion_blur_oracle() -> Outcome {
    let (h, w) = (64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut blur_time = Duration::ZERO;
    for n in 0..50 {
        let sigma = [1.0, 1.5, 2.0, 3.0][n % 4];
        let truncate = [3.0, 4.0][n % 2];
        let vals: Vec<f32> = (0..h * w).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let field = MaskedField::from_values(Grid::from_vec(h, w, vals.clone()).unwrap(), open_sea(h, w)).unwrap();
        let spec = GaussianSpec::new(sigma, 0.0, truncate).unwrap();
        let t = Instant::now();
        let out = gaussian_blur_nan(&field, &spec).unwrap();
        blur_time += t.elapsed();
        let v64: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let reference = dense_nan_blur(&v64, &vec![true; h * w], h, w, sigma, truncate);
        for (i, r) in reference.iter().enumerate() {
            let got = out.value(i).ok_or_else(|| format!("field {n} cell {i} left missing"))?;
            worst = worst.max((got as f64 - r.unwrap()).abs());
        }
    }
    check(
        worst <= 1e-6 && blur_time < Duration::from_secs(5),
        format!("50 fields, max |err| {worst:.2e} (tol 1e-6), blur time {:.3}s (limit 5s)", blur_time.as_secs_f64()),
    )
}

fn criterion_blur_constant() -> Outcome {
    let (h, w) = (64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut filled = 0usize;
    for n in 0..50 {
        let c: f32 = rng.random_range(-2.0f32..30.0);
        let keep: f64 = rng.random_range(0.02..0.95);
        let mut valid: Vec<bool> = (0..h * w).map(|_| rng.random_bool(keep)).collect();
        valid[rng.random_range(0..h * w)] = true;
        let values: Vec<f32> = valid.iter().map(|&ok| if ok { c } else { sstfill_core::MISSING }).collect();
        let field = MaskedField::new(
            Grid::from_vec(h, w, values).unwrap(),
            Grid::from_vec(h, w, valid).unwrap(),
            open_sea(h, w),
        )
        .unwrap();
        let spec = GaussianSpec::new(1.0 + (n % 3) as f64, 0.0, 3.0).unwrap();
        let out = gaussian_blur_nan(&field, &spec).unwrap();
        for i in 0..h * w {
            if let Some(v) = out.value(i) {
                filled += 1;
                worst = worst.max((v as f64 - c as f64).abs());
            }
        }
    }
    check(
        worst <= 1e-6,
        format!("50 masks, {filled} output cells, max deviation {worst:.2e} (tol 1e-6)"),
    )
}

fn criterion_generator(world: &World) -> Outcome {
    let gen = world.generator(GeneratorConfig::testing(31));
    let cfg = gen.config().clone();
    let (mut post, mut violations, mut leaks) = (0.0, 0usize, 0usize);
    let n = 10_000u64;
    for i in 0..n {
        let s = gen.sample_at(i).map_err(|e| e.to_string())?;
        if s.base_visible() < cfg.min_base_visible
            || s.post_visible() < cfg.min_post_visible
            || s.diff_fraction() < cfg.min_diff_sea_fraction
        {
            violations += 1;
        }
        leaks += leak_count(&s);
        post += s.post_visible();
    }
    let mean = post / n as f64;
    check(
        violations == 0 && leaks == 0 && (mean - 0.46).abs() <= 0.03,
        format!("{n} samples, {violations} constraint violations, {leaks} leaked cells, mean post-visibility {mean:.4} (target 0.46 +- 0.03)"),
    )
}

fn criterion_gradcheck() -> Outcome {
    let t = Instant::now();
    let cases = op_suite(17).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let mut per_op = std::collections::BTreeMap::<&str, usize>::new();
    let mut worst = ("", 0.0f64);
    for c in &cases {
        *per_op.entry(c.op).or_default() += 1;
        if c.error > worst.1 {
            worst = (c.op, c.error);
        }
    }
    let thin: Vec<&str> = per_op.iter().filter(|(_, &n)| n < 3).map(|(k, _)| *k).collect();
    check(
        worst.1 < TOLERANCE && thin.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} ops, {} cases, worst {:.2e} ({}) (tol {TOLERANCE:.0e}), ops with <3 instances {thin:?}, {:.2}s (limit 60s)",
            per_op.len(),
            cases.len(),
            worst.1,
            worst.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn gradients_by_loop(ds: &Dataset, axis: Axis, lag: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = ds.dims();
    let mut all = Vec::new();
    let mut day_max = Vec::new();
    for t in 0..ds.len() {
        let mut local = Vec::new();
        let day = ds.day(t);
        match axis {
            Axis::Spatial => {
                for y in 0..h {
                    for x in 0..w {
                        let a = day.value(y * w + x);
                        if x + 1 < w {
                            if let (Some(a), Some(b)) = (a, day.value(y * w + x + 1)) {
                                local.push((a as f64 - b as f64).abs());
                            }
                        }
                        if y + 1 < h {
                            if let (Some(a), Some(b)) = (a, day.value((y + 1) * w + x)) {
                                local.push((a as f64 - b as f64).abs());
                            }
                        }
                    }
                }
            }
            Axis::Temporal => {
                if t < lag {
                    continue;
                }
                let prev = ds.day(t - lag);
                for i in 0..h * w {
                    if let (Some(a), Some(b)) = (day.value(i), prev.value(i)) {
                        local.push((a as f64 - b as f64).abs());
                    }
                }
            }
        }
        if !local.is_empty() {
            day_max.push(local.iter().cloned().fold(0.0, f64::max));
        }
        all.extend(local);
    }
    (all, day_max)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6
}

fn criterion_stats() -> Outcome {
    let full = gen_dataset(&SynthConfig {
        seed: 808,
        n_years: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let ds = Dataset::new("stats-100", full.start(), full.land().clone(), full.days()[..100].to_vec())
        .map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let thresholds = [0.05, 0.1, 0.2, 0.5, 1.0];
    for axis in [Axis::Spatial, Axis::Temporal] {
        let (d, day_max) = gradients_by_loop(&ds, axis, 1);
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let avg_max = day_max.iter().sum::<f64>() / day_max.len() as f64;
        let got = match axis {
            Axis::Spatial => stats::spatial_gradients(&ds),
            Axis::Temporal => stats::temporal_gradients(&ds),
        }
        .map_err(|e| e.to_string())?;
        if got.n_pairs != d.len() as u64
            || !close(got.mean, mean)
            || !close(got.std, std)
            || got.max != max
            || !close(got.avg_max, avg_max)
        {
            failures.push(format!("{axis:?} gradients {got:?}"));
        }
        let (frac, pairs) = stats::exceedance(&ds, axis, &thresholds).map_err(|e| e.to_string())?;
        let counts: Vec<u64> = thresholds.iter().map(|&t| d.iter().filter(|&&v| v > t).count() as u64).collect();
        let expected: Vec<f64> = counts.iter().map(|&c| c as f64 / d.len() as f64).collect();
        if pairs != d.len() as u64 || frac != expected {
            failures.push(format!("{axis:?} exceedance {frac:?} vs {expected:?}"));
        }
    }
    for lag in 1..=5 {
        let (d, _) = gradients_by_loop(&ds, Axis::Temporal, lag);
        let n = d.len() as f64;
        let mad = d.iter().sum::<f64>() / n;
        let rmsd = (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let got = stats::persistence(&ds, lag).map_err(|e| e.to_string())?;
        if got.n_pairs != d.len() as u64 || !close(got.mad, mad) || !close(got.rmsd, rmsd) {
            failures.push(format!("persistence lag {lag} {got:?}"));
        }
    }
    let hist = stats::histogram(&ds, 0.5).map_err(|e| e.to_string())?;
    let mut values = Vec::new();
    for t in 0..ds.len() {
        let day = ds.day(t);
        values.extend((0..day.values().len()).filter_map(|i| day.value(i)).map(|v| v as f64));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let first = (lo / 0.5).floor() as i64;
    let mut counts = vec![0u64; hist.counts.len()];
    let mut outside = 0;
    for v in &values {
        let k = (v / 0.5).floor() as i64 - first;
        match counts.get_mut(k as usize) {
            Some(c) if k >= 0 => *c += 1,
            _ => outside += 1,
        }
    }
    if hist.first_bin != first || hist.counts != counts || outside != 0 {
        failures.push("histogram counts differ".into());
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "100 days: gradients, exceedance, persistence lags 1-5 and histogram ({} cells) match nested-loop oracles",
                values.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

// Training setup shared by the model criteria.

struct Trained {
    model: Model,
    outcome: FitOutcome,
    elapsed: Duration,
}

fn gen_for(world: &World, profile: &str, seed: u64, s: usize, mode: Mode, days: std::ops::Range<usize>) -> Generator {
    world.generator(GeneratorConfig {
        s_days: s,
        mode,
        base_days: Some(days),
        ..GeneratorConfig::profile(profile, seed).unwrap()
    })
}

fn splits(world: &World) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
    let n = world.ds.len();
    let hold = world.ds.holdout_start(0.12);
    let v0 = (n as f64 * 0.8) as usize;
    (0..v0, v0..hold, hold..n)
}

fn test_gen(world: &World, seed: u64, s: usize, mode: Mode) -> Generator {
    gen_for(world, "testing", seed, s, mode, splits(world).2)
}

fn acceptance_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 12,
        steps_per_epoch: 20,
        batch_size: BATCH,
        lr0: 1e-3,
        lr_min: 1e-3 / 16.0,
        plateau_patience: 3,
        early_stop_patience: 5,
        val_batches: 4,
        ..Default::default()
    }
}

fn toy_unet(s: usize) -> Model {
    let mut c = UNetConfig::new(&[16, 32, 64], s, 64);
    c.blocks_per_stage = 1;
    Model::new(ModelConfig::Unet(c), 5).unwrap()
}

fn train(world: &World, s: usize, mode: Mode, cfg: &TrainConfig) -> Trained {
    let (tr, va, _) = splits(world);
    let train = gen_for(world, "training", 11, s, mode, tr);
    let val = gen_for(world, "testing", 12, s, mode, va);
    let mut model = toy_unet(s);
    let t = Instant::now();
    let outcome = fit(&mut model, &train, &val, cfg, FitOptions::default()).unwrap();
    Trained {
        model,
        outcome,
        elapsed: t.elapsed(),
    }
}

fn model_rmse(world: &World, model: &Model, s: usize, mode: Mode, seed: u64) -> f64 {
    let p = ModelPredictor::new(model, "model");
    evaluate_rmse(&p, &test_gen(world, seed, s, mode), TEST_BATCHES, BATCH).unwrap().rmse
}

fn criterion_skill(world: &World, main: &Trained) -> Outcome {
    let p = ModelPredictor::new(&main.model, "model");
    let gen = test_gen(world, TEST_SEED, 3, Mode::Residual);
    let reps = evaluate_many(&[&p, &ClimatologyBaseline, &Persistence1d], &gen, TEST_BATCHES, BATCH)
        .map_err(|e| e.to_string())?;
    let (m, c, q) = (reps[0].rmse, reps[1].rmse, reps[2].rmse);
    let epochs = main.outcome.log.epochs.len();
    let mins = main.elapsed.as_secs_f64() / 60.0;
    check(
        m <= 0.95 * c && m <= 0.95 * q && epochs <= 30 && mins <= 30.0,
        format!(
            "RMSE model {m:.4} vs climatology {c:.4} ({:+.1}%) and persistence {q:.4} ({:+.1}%) on {} samples; {epochs} epochs, {mins:.1} min",
            100.0 * (m / c - 1.0),
            100.0 * (m / q - 1.0),
            reps[0].samples
        ),
    )
}

fn criterion_history(world: &World, main: &Trained, single: &Trained) -> Outcome {
    let r3 = model_rmse(world, &main.model, 3, Mode::Residual, TEST_SEED);
    let r1 = model_rmse(world, &single.model, 1, Mode::Residual, TEST_SEED);
    check(
        r3 <= r1,
        format!(
            "RMSE s=3 {r3:.4} vs s=1 {r1:.4}, both {} epochs budget",
            acceptance_config().max_epochs
        ),
    )
}

fn criterion_degradation(world: &World, main: &Trained) -> Outcome {
    let levels = [
        (0.75, 0.85),
        (0.65, 0.75),
        (0.55, 0.65),
        (0.45, 0.55),
        (0.35, 0.45),
        (0.25, 0.35),
        (0.15, 0.25),
    ];
    let base = GeneratorConfig {
        s_days: 3,
        base_days: Some(splits(world).2),
        ..GeneratorConfig::testing(15)
    };
    let p = ModelPredictor::new(&main.model, "model");
    let curve = degradation_curve(&p, &world.ds, &world.clim, &base, &levels, 10, BATCH).map_err(|e| e.to_string())?;
    let occ: Vec<f64> = curve.iter().map(|c| c.occlusion).collect();
    let rmse: Vec<f64> = curve.iter().map(|c| c.rmse).collect();
    let rho = rank_correlation(&occ, &rmse);
    let pts: Vec<String> = curve.iter().map(|c| format!("{:.2}->{:.3}", c.occlusion, c.rmse)).collect();
    check(
        curve.len() >= 6 && rho > 0.8,
        format!("{} levels, Spearman {rho:.3} (need > 0.8), occlusion->RMSE [{}]", curve.len(), pts.join(", ")),
    )
}

fn criterion_residual(world: &World, main: &Trained, direct: &Trained) -> Outcome {
    let r = model_rmse(world, &main.model, 3, Mode::Residual, TEST_SEED);
    let d = model_rmse(world, &direct.model, 3, Mode::Direct, TEST_SEED);
    check(r < d, format!("RMSE residual {r:.4} vs direct {d:.4}"))
}

fn criterion_reproducibility(world: &World, main: &Trained) -> Outcome {
    let cfg = TrainConfig {
        max_epochs: 3,
        steps_per_epoch: 2,
        batch_size: 8,
        val_batches: 1,
        ..acceptance_config()
    };
    let a = train(world, 3, Mode::Residual, &cfg);
    let b = train(world, 3, Mode::Residual, &cfg);
    let same_log = a.outcome.log.losses() == b.outcome.log.losses() && a.outcome.log.epochs.len() == 3;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    Checkpoint::save(dir.path(), &main.model, main.outcome.steps, AdamWConfig::default(), serde_json::Value::Null)
        .map_err(|e| e.to_string())?;
    let (loaded, _) = Checkpoint::load(dir.path()).map_err(|e| e.to_string())?;
    let gen = test_gen(world, TEST_SEED, 3, Mode::Residual);
    let before = evaluate_rmse(&ModelPredictor::new(&main.model, "m"), &gen, 5, BATCH).map_err(|e| e.to_string())?;
    let after = evaluate_rmse(&ModelPredictor::new(&loaded, "m"), &gen, 5, BATCH).map_err(|e| e.to_string())?;
    let same_ckpt = before.rmse.to_bits() == after.rmse.to_bits();

    let mut broken = 0;
    for day in world.ds.days() {
        let parts = split_quadrants(day).map_err(|e| e.to_string())?;
        let back = join_quadrants(&parts).map_err(|e| e.to_string())?;
        let bits = |f: &MaskedField| f.values().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&back) != bits(day) || back.valid() != day.valid() || back.land() != day.land() {
            broken += 1;
        }
    }
    check(
        same_log && same_ckpt && broken == 0,
        format!(
            "3-epoch logs identical: {same_log}; checkpoint RMSE {} vs {} bit-identical: {same_ckpt}; quadrant round trip failures {broken}/{}",
            before.rmse,
            after.rmse,
            world.ds.len()
        ),
    )
}

fn criterion_seed_stability(world: &World, main: &Trained) -> Outcome {
    let a = model_rmse(world, &main.model, 3, Mode::Residual, TEST_SEED);
    let b = model_rmse(world, &main.model, 3, Mode::Residual, ALT_TEST_SEED);
    check(
        (a - b).abs() < 0.01,
        format!("RMSE seed {TEST_SEED} {a:.4} vs seed {ALT_TEST_SEED} {b:.4}, |diff| {:.4} (tol 0.01)", (a - b).abs()),
    )
}

#[test]
fn acceptance() {
    let mut r = Runner { results: Vec::new() };
    say("acceptance criteria");
    let world = World::new(SynthConfig::default());

    r.run(1, "NaN-aware blur matches dense reflect convolution", criterion_blur_oracle);
    r.run(2, "blur preserves constant fields under random gaps", criterion_blur_constant);
    r.run(3, "generator constraints and visibility target", || criterion_generator(&world));
    r.run(4, "analytic gradients match finite differences", criterion_gradcheck);
    r.run(8, "dataset statistics match nested-loop oracles", criterion_stats);

    let cfg = acceptance_config();
    let main = train(&world, 3, Mode::Residual, &cfg);
    say(&format!(
        "trained s=3 residual: {} epochs, best val {:.4}, {:.0}s",
        main.outcome.log.epochs.len(),
        main.outcome.best_val_loss,
        main.elapsed.as_secs_f64()
    ));
    r.run(5, "toy U-Net beats climatology and persistence", || criterion_skill(&world, &main));
    r.run(7, "error grows with occlusion", || criterion_degradation(&world, &main));
    r.run(10, "reproducibility", || criterion_reproducibility(&world, &main));
    r.run(11, "test RMSE stable across seed sets", || criterion_seed_stability(&world, &main));

    let single = train(&world, 1, Mode::Residual, &cfg);
    r.run(6, "three input days beat one", || criterion_history(&world, &main, &single));
    let direct = train(&world, 3, Mode::Direct, &cfg);
    r.run(9, "residual target beats direct SST", || criterion_residual(&world, &main, &direct));

    r.results.sort_by_key(|(id, _, _)| *id);
    say("summary");
    for (_, _, line) in &r.results {
        say(line);
    }
    let failed: Vec<u32> = r.results.iter().filter(|(_, ok, _)| !ok).map(|(id, _, _)| *id).collect();
    assert_eq!(r.results.len(), 11);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
