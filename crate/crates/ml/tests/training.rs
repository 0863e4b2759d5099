//! End-to-end training on small synthetic problems.

use derfdd_ml::train::evaluate_mse;
use derfdd_ml::{train, Checkpoint, DenseSet, LstmDims, LstmModel, MlpModel, TrainConfig};

/// Next-step prediction of a three-phase sine sampled 40 times per period.
fn sine_sets(lookback: usize) -> (DenseSet, DenseSet) {
    let step = std::f64::consts::TAU / 40.0;
    let sample = |n: usize, k: usize| 0.8 * (n as f64 * step - k as f64 * std::f64::consts::TAU / 3.0).sin();
    let mut train_set = DenseSet::new(lookback * 3, 3);
    let mut val_set = DenseSet::new(lookback * 3, 3);
    for start in 0..600 {
        let window: Vec<f64> = (start..start + lookback).flat_map(|n| (0..3).map(move |k| sample(n, k))).collect();
        let target: Vec<f64> = (0..3).map(|k| sample(start + lookback, k)).collect();
        if start % 5 == 0 {
            val_set.push(&window, &target);
        } else {
            train_set.push(&window, &target);
        }
    }
    (train_set, val_set)
}

fn small_lstm_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 5e-3, batch_size: 16, max_epochs: 40, patience: 5, seed, ..TrainConfig::lstm_default() }
}

#[test]
fn lstm_learns_next_sine_sample() {
    let dims = LstmDims { input: 3, hidden1: 8, hidden2: 8, output: 3, lookback: 10 };
    let (tr, va) = sine_sets(dims.lookback);
    let m = LstmModel::new(dims, 1).unwrap();
    let before = evaluate_mse(&m, &va).unwrap();
    let out = train(&m, &tr, &va, &small_lstm_config(3)).unwrap();
    let after = evaluate_mse(&out.model, &va).unwrap();
    assert!(after < 1e-3, "validation mse {after} (started at {before})");
    let best = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(after, best);
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let dims = LstmDims { input: 3, hidden1: 4, hidden2: 4, output: 3, lookback: 5 };
    let (tr, va) = sine_sets(dims.lookback);
    let m = LstmModel::new(dims, 2).unwrap();
    let cfg = TrainConfig { max_epochs: 3, ..small_lstm_config(9) };
    let a = train(&m, &tr, &va, &cfg).unwrap();
    let b = train(&m, &tr, &va, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
    let c = train(&m, &tr, &va, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn mlp_fits_a_smooth_map_and_survives_checkpointing() {
    let mut tr = DenseSet::new(6, 3);
    let mut va = DenseSet::new(6, 3);
    for i in 0..800 {
        let t = i as f64 * 0.037;
        let x: Vec<f64> = (0..6).map(|j| (t * (1.0 + j as f64 * 0.3)).sin()).collect();
        let y = [0.5 * x[0] - 0.3 * x[3], 0.4 * x[1] * x[4], 0.2 * (x[2] + x[5])];
        if i % 4 == 0 {
            va.push(&x, &y);
        } else {
            tr.push(&x, &y);
        }
    }
    let m = MlpModel::new(&[6, 16, 16, 3], 5).unwrap();
    let cfg = TrainConfig { max_epochs: 60, seed: 1, ..TrainConfig::mlp_default() };
    let out = train(&m, &tr, &va, &cfg).unwrap();
    let val = evaluate_mse(&out.model, &va).unwrap();
    assert!(val < 2e-3, "validation mse {val}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.ckpt");
    Checkpoint::from(&out.model).save(&path).unwrap();
    let back = MlpModel::try_from(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(evaluate_mse(&back, &va).unwrap(), val);
}
