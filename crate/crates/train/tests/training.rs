mod common;

use std::cell::RefCell;

use common::World;
use sstfill_core::{GeneratorConfig, SynthConfig};
use sstfill_nn::{Checkpoint, Model, ModelConfig, UNetConfig};
use sstfill_train::{evaluate_rmse, fit, FitOptions, ModelPredictor, TrainConfig};

fn tiny_model(s: usize, size: usize, seed: u64) -> Model {
    let mut c = UNetConfig::new(&[4, 8], s, size);
    c.blocks_per_stage = 1;
    Model::new(ModelConfig::Unet(c), seed).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        steps_per_epoch: 1,
        batch_size: 2,
        lr0: 1e-3,
        lr_min: 1e-5,
        val_batches: 1,
        ..Default::default()
    }
}

#[test]
fn early_stop_patience_one_stops_after_two_epochs() {
    let w = World::small();
    let (train, val) = (w.testing(1, 1), w.testing(2, 1));
    let mut model = tiny_model(1, 16, 0);
    let cfg = TrainConfig {
        early_stop_patience: 1,
        ..quick_cfg(20)
    };
    let opts = FitOptions {
        val_override: Some(Box::new(|_, _| 1.0)),
        ..Default::default()
    };
    let out = fit(&mut model, &train, &val, &cfg, opts).unwrap();
    assert_eq!(out.log.epochs.len(), 2);
    assert!(out.log.stopped_early);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn plateau_schedule_under_forced_stagnation() {
    let w = World::small();
    let (train, val) = (w.testing(1, 1), w.testing(2, 1));
    let mut model = tiny_model(1, 16, 0);
    let cfg = TrainConfig {
        early_stop_patience: 100,
        ..quick_cfg(25)
    };
    let opts = FitOptions {
        val_override: Some(Box::new(|_, _| 1.0)),
        ..Default::default()
    };
    let out = fit(&mut model, &train, &val, &cfg, opts).unwrap();
    let lr: Vec<f64> = out.log.epochs.iter().map(|r| r.lr).collect();
    assert_eq!(lr.len(), 25);
    assert!(lr[..10].iter().all(|&v| v == 1e-3));
    assert_eq!(lr[10], 5e-4);
    assert_eq!(lr[20], 2.5e-4);
    assert!(lr.windows(2).all(|p| p[1] <= p[0]));

    let mut model = tiny_model(1, 16, 0);
    let cfg = TrainConfig {
        lr0: 1e-4,
        early_stop_patience: 100,
        ..quick_cfg(25)
    };
    let opts = FitOptions {
        val_override: Some(Box::new(|_, _| 1.0)),
        ..Default::default()
    };
    let out = fit(&mut model, &train, &val, &cfg, opts).unwrap();
    let lr: Vec<f64> = out.log.epochs.iter().map(|r| r.lr).collect();
    assert_eq!((lr[9], lr[10], lr[19], lr[20], lr[24]), (1e-4, 5e-5, 5e-5, 2.5e-5, 2.5e-5));
    assert!(lr.iter().all(|&v| v >= 1e-5));
}

#[test]
fn checkpoint_written_on_improvement_and_best_restored() {
    let w = World::small();
    let (train, val) = (w.testing(1, 1), w.testing(2, 1));
    let mut model = tiny_model(1, 16, 0);
    let dir = tempfile::tempdir().unwrap();
    let script = [3.0, 2.0, 2.5, 1.0, 4.0];
    let snapshots = RefCell::new(Vec::new());
    let opts = FitOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        checkpoint_extra: serde_json::json!({}),
        val_override: Some(Box::new(|e, _| script[e - 1])),
        on_epoch: Some(Box::new(|r| snapshots.borrow_mut().push(r.checkpoint))),
        ..Default::default()
    };
    let out = fit(&mut model, &train, &val, &quick_cfg(5), opts).unwrap();
    assert_eq!(*snapshots.borrow(), vec![true, true, false, true, false]);
    assert_eq!(out.best_epoch, 4);
    let (loaded, manifest) = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(manifest.extra["epoch"], 4);
    assert_eq!(manifest.step, 4);
    assert_eq!(loaded.params, model.params);
}

#[test]
fn same_seed_gives_identical_logs() {
    let w = World::small();
    let run = || {
        let (train, val) = (w.testing(5, 2), w.testing(6, 2));
        let mut model = tiny_model(2, 16, 3);
        let cfg = TrainConfig {
            steps_per_epoch: 3,
            batch_size: 4,
            ..quick_cfg(3)
        };
        let out = fit(&mut model, &train, &val, &cfg, FitOptions::default()).unwrap();
        let mut csv = Vec::new();
        out.log.write_csv(&mut csv).unwrap();
        (csv, model.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn channel_mismatch_rejected() {
    let w = World::small();
    let (train, val) = (w.testing(1, 2), w.testing(2, 2));
    let mut model = tiny_model(1, 16, 0);
    assert!(fit(&mut model, &train, &val, &quick_cfg(1), FitOptions::default()).is_err());
}

#[test]
fn non_finite_loss_aborts() {
    let w = World::small();
    let (train, val) = (w.testing(1, 1), w.testing(2, 1));
    let mut model = tiny_model(1, 16, 0);
    for id in 0..model.params.len() {
        model.params.value_mut(id).data_mut().fill(f32::NAN);
    }
    let err = fit(&mut model, &train, &val, &quick_cfg(1), FitOptions::default()).unwrap_err();
    assert!(matches!(err, sstfill_train::Error::NonFinite { .. }), "{err}");
}

#[test]
fn toy_unet_halves_validation_loss() {
    let w = World::new(SynthConfig::default());
    let n = w.ds.len();
    let v0 = n * 8 / 10;
    let hold = w.ds.holdout_start(0.12);
    let train = w.generator(GeneratorConfig {
        base_days: Some(0..v0),
        ..GeneratorConfig::training(1)
    });
    let val = w.generator(GeneratorConfig {
        base_days: Some(v0..hold),
        ..GeneratorConfig::testing(2)
    });
    let mut c = UNetConfig::new(&[8, 16], 1, 64);
    c.blocks_per_stage = 1;
    let mut model = Model::new(ModelConfig::Unet(c), 1).unwrap();
    let initial = {
        let b = sstfill_train::Batch::from_samples(&val.clone().make_batch(16).unwrap()).unwrap();
        sstfill_train::fit::validation_loss(&model, &[b]).unwrap()
    };
    let cfg = TrainConfig {
        max_epochs: 6,
        steps_per_epoch: 10,
        batch_size: 16,
        lr0: 2e-3,
        lr_min: 1e-4,
        val_batches: 1,
        ..Default::default()
    };
    let out = fit(&mut model, &train, &val, &cfg, FitOptions::default()).unwrap();
    let best = out.best_val_loss;
    println!("initial {initial:.4} best {best:.4}");
    assert!(best < 0.5 * initial);
}

#[test]
fn checkpoint_restore_reproduces_rmse_bit_exactly() {
    let w = World::small();
    let model = tiny_model(1, 16, 9);
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::save(dir.path(), &model, 0, Default::default(), serde_json::Value::Null).unwrap();
    let (back, _) = Checkpoint::load(dir.path()).unwrap();
    let test = w.testing(3, 1);
    let a = evaluate_rmse(&ModelPredictor::new(&model, "m"), &test, 3, 8).unwrap();
    let b = evaluate_rmse(&ModelPredictor::new(&back, "m"), &test, 3, 8).unwrap();
    assert_eq!(a.rmse.to_bits(), b.rmse.to_bits());
}
