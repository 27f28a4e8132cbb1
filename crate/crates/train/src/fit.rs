//! The training loop.

use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Instant;

use sstfill_core::Generator;
use sstfill_nn::{AdamW, AdamWConfig, Checkpoint, Graph, Model, ParamStore};

use crate::batch::Batch;
use crate::callbacks::{EarlyStopping, ModelCheckpoint, ReduceLrOnPlateau, TestCallback};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{eval_batches, evaluate_rmse, ModelPredictor};
use crate::log::{EpochRecord, TrainLog};

type ValHook<'a> = Box<dyn FnMut(usize, f64) -> f64 + 'a>;
type EpochHook<'a> = Box<dyn FnMut(&EpochRecord) + 'a>;

#[derive(Default)]
pub struct FitOptions<'a> {
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_extra: serde_json::Value,
    pub tests: Vec<TestCallback>,
    /// `(epoch, measured) -> loss seen by the callbacks`; lets tests script
    /// the validation curve.
    pub val_override: Option<ValHook<'a>>,
    pub on_epoch: Option<EpochHook<'a>>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Pooled masked MSE of the model over fixed batches, eval mode.
pub fn validation_loss(model: &Model, batches: &[Batch]) -> Result<f64> {
    let (mut sse, mut n) = (0.0f64, 0u64);
    for b in batches {
        let y = model.predict(&b.x)?;
        for ((&p, &t), &m) in y.data().iter().zip(&b.target).zip(&b.mask) {
            if m > 0.5 {
                sse += (p as f64 - t as f64).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(sstfill_nn::Error::EmptyMask.into());
    }
    Ok(sse / n as f64)
}

fn train_step(model: &mut Model, opt: &mut AdamW, batch: Batch) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(batch.x);
    let y = model.forward(&mut g, x, true)?;
    let loss = g.masked_mse(y, &batch.target, &batch.mask)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss);
    let pg = g.param_grads(&grads, model.params.len());
    let updates = g.take_updates();
    opt.step(&mut model.params, &pg)?;
    model.apply_updates(updates);
    Ok(value)
}

/// Train with early stopping, learning-rate halving on plateaus, best-weight
/// checkpointing and periodic RMSE tests. On return the model holds the
/// weights of the best validation epoch.
///
/// Batches come from a producer thread through a bounded queue; batch `k` is
/// always built from training-stream positions `k·batch .. (k+1)·batch`, so
/// results do not depend on timing.
pub fn fit(
    model: &mut Model,
    train: &Generator,
    val: &Generator,
    cfg: &TrainConfig,
    mut opts: FitOptions<'_>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let want = model.config().in_channels();
    for g in [train, val] {
        if g.config().channels_in() != want {
            return Err(Error::Config(format!(
                "model takes {want} channels, generator produces {}",
                g.config().channels_in()
            )));
        }
    }
    let val_set: Vec<Batch> = eval_batches(val, cfg.val_batches, cfg.batch_size)
        .map(|s| Batch::from_samples(&s?))
        .collect::<Result<_>>()?;

    let adam = AdamWConfig {
        lr: cfg.lr0,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(adam, &model.params)?;
    let mut early = EarlyStopping::new(cfg.early_stop_patience);
    let mut plateau = ReduceLrOnPlateau::new(cfg.plateau_patience, cfg.lr_min);
    let mut ckpt = ModelCheckpoint::new(opts.checkpoint_dir.clone());
    let mut best_params: ParamStore = model.params.clone();
    let mut best_epoch = 0;
    let mut log = TrainLog::default();
    let mut lr = cfg.lr0;
    let mut steps = 0u64;
    let total = cfg.max_epochs * cfg.steps_per_epoch;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(cfg.prefetch);
        let producer = train.clone();
        let bs = cfg.batch_size;
        scope.spawn(move || {
            let mut gen = producer;
            gen.seek(0);
            for _ in 0..total {
                let b = gen.make_batch(bs).map_err(Error::from).and_then(|s| Batch::from_samples(&s));
                if tx.send(b).is_err() {
                    break;
                }
            }
        });

        for epoch in 1..=cfg.max_epochs {
            let start = Instant::now();
            let mut sum = 0.0;
            for step in 0..cfg.steps_per_epoch {
                let batch = rx.recv().map_err(|_| Error::GeneratorExhausted)??;
                let l = train_step(model, &mut opt, batch)?;
                if !l.is_finite() {
                    return Err(Error::NonFinite { epoch, step, value: l });
                }
                sum += l;
                steps += 1;
            }
            let train_loss = sum / cfg.steps_per_epoch as f64;
            let measured = validation_loss(model, &val_set)?;
            if !measured.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: cfg.steps_per_epoch,
                    value: measured,
                });
            }
            let val_loss = match opts.val_override.as_mut() {
                Some(f) => f(epoch, measured),
                None => measured,
            };

            let improved = ckpt.improved(val_loss);
            if improved {
                best_params = model.params.clone();
                best_epoch = epoch;
                if let Some(dir) = &ckpt.dir {
                    let mut extra = opts.checkpoint_extra.clone();
                    if let serde_json::Value::Object(m) = &mut extra {
                        m.insert("epoch".into(), epoch.into());
                        m.insert("val_loss".into(), val_loss.into());
                    }
                    Checkpoint::save(dir, model, steps, opt.cfg, extra)?;
                }
            }
            lr = plateau.update(val_loss, lr);
            opt.set_lr(lr);
            let stop = early.update(val_loss);

            let mut tests = std::collections::BTreeMap::new();
            for t in opts.tests.iter().filter(|t| t.due(epoch)) {
                let r = evaluate_rmse(&ModelPredictor::new(model, "model"), &t.generator, t.n_batches, t.batch_size)?;
                tests.insert(t.name.clone(), r.rmse);
            }
            let rec = EpochRecord {
                epoch,
                train_loss,
                val_loss,
                lr,
                checkpoint: improved,
                tests,
                wall_secs: start.elapsed().as_secs_f64(),
            };
            if let Some(f) = opts.on_epoch.as_mut() {
                f(&rec);
            }
            log.push(rec);
            if stop {
                log.stopped_early = true;
                break;
            }
        }
        Ok(())
    })?;

    model.params = best_params;
    Ok(FitOutcome {
        best_val_loss: ckpt.best(),
        best_epoch,
        log,
        steps,
    })
}
