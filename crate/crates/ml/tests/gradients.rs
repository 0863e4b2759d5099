//! Analytic gradients against central finite differences, and the LSTM
//! forward pass against a naive scalar re-implementation.

use derfdd_ml::lstm::Gate;
use derfdd_ml::train::{batch_loss_grad, DenseSet};
use derfdd_ml::{LstmCache, LstmDims, LstmModel, MlpCache, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-6;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// |a - b| / max(|a|, |b|), falling back to the absolute error for entries
/// that are numerically zero.
fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight transcription of the cell recurrences, one scalar at a time.
fn naive_lstm(m: &LstmModel, window: &[f64]) -> Vec<f64> {
    let d = m.dims();
    let mut seq: Vec<Vec<f64>> = window.chunks(d.input).map(|c| c.to_vec()).collect();
    for (layer, hidden) in [(0, d.hidden1), (1, d.hidden2)] {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut out = Vec::new();
        for x in &seq {
            let mut h_new = vec![0.0; hidden];
            let mut c_new = vec![0.0; hidden];
            for u in 0..hidden {
                let pre = |g: Gate| {
                    let mut s = m.bias(layer, g, u);
                    for (j, xj) in x.iter().enumerate() {
                        s += m.weight(layer, false, g, u, j) * xj;
                    }
                    for (j, hj) in h.iter().enumerate() {
                        s += m.weight(layer, true, g, u, j) * hj;
                    }
                    s
                };
                let i = sigmoid(pre(Gate::Input));
                let f = sigmoid(pre(Gate::Forget));
                let o = sigmoid(pre(Gate::Output));
                let g = pre(Gate::Candidate).tanh();
                c_new[u] = f * c[u] + i * g;
                h_new[u] = o * c_new[u].tanh();
            }
            h = h_new;
            c = c_new;
            out.push(h.clone());
        }
        seq = out;
    }
    let h = seq.last().unwrap();
    (0..d.output)
        .map(|k| m.head_bias(k) + (0..d.hidden2).map(|j| m.head_weight(k, j) * h[j]).sum::<f64>())
        .collect()
}

#[test]
fn lstm_forward_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (dims, seed) in [
        (LstmDims { input: 4, hidden1: 3, hidden2: 5, output: 3, lookback: 6 }, 1),
        (LstmDims::DEFAULT, 2),
    ] {
        let m = LstmModel::new(dims, seed).unwrap();
        for _ in 0..5 {
            let w = random_vec(&mut rng, dims.window_len(), 1.0);
            let fast = m.predict(&w).unwrap();
            let slow = naive_lstm(&m, &w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn lstm_prediction_is_deterministic() {
    let m = LstmModel::new(LstmDims::DEFAULT, 5).unwrap();
    let w: Vec<f64> = (0..180).map(|i| (i as f64 * 0.05).sin()).collect();
    assert_eq!(m.predict(&w).unwrap(), m.predict(&w).unwrap());
}

fn lstm_objective(m: &LstmModel, x: &[f64], weights: &[f64]) -> f64 {
    m.predict(x).unwrap().iter().zip(weights).map(|(y, w)| y * w).sum()
}

#[test]
fn lstm_gradient_matches_finite_differences() {
    let dims = LstmDims { input: 9, hidden1: 3, hidden2: 4, output: 3, lookback: 5 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = LstmModel::new(dims, 3).unwrap();
    // Spread the weights so every gate operates away from saturation and zero.
    let scaled: Vec<f64> = m.params().iter().map(|p| p * 2.0).collect();
    m.params_mut().copy_from_slice(&scaled);
    let x = random_vec(&mut rng, dims.window_len(), 1.0);
    let weights = random_vec(&mut rng, 3, 1.0);

    let mut cache = LstmCache::default();
    m.forward(&x, &mut cache).unwrap();
    let mut grad = vec![0.0; m.params().len()];
    m.backward(&cache, &weights, &mut grad).unwrap();
    assert!(m.params().len() < 500);

    let mut worst = 0.0f64;
    for i in 0..m.params().len() {
        let mut plus = m.clone();
        plus.params_mut()[i] += FD_STEP;
        let mut minus = m.clone();
        minus.params_mut()[i] -= FD_STEP;
        let numeric = (lstm_objective(&plus, &x, &weights) - lstm_objective(&minus, &x, &weights)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    assert!(worst < REL_TOL, "max relative gradient error {worst:e}");
}

fn mlp_objective(m: &MlpModel, x: &[f64], weights: &[f64]) -> f64 {
    m.predict(x).unwrap().iter().zip(weights).map(|(y, w)| y * w).sum()
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = MlpModel::new(&[6, 4, 5, 3], 4).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let x = random_vec(&mut rng, 6, 1.0);
        let weights = random_vec(&mut rng, 3, 1.0);
        let mut cache = MlpCache::default();
        m.forward(&x, &mut cache).unwrap();
        let mut grad = vec![0.0; m.params().len()];
        m.backward(&cache, &weights, &mut grad).unwrap();
        for i in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[i] += FD_STEP;
            let mut minus = m.clone();
            minus.params_mut()[i] -= FD_STEP;
            let numeric = (mlp_objective(&plus, &x, &weights) - mlp_objective(&minus, &x, &weights)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad[i], numeric));
        }
    }
    assert!(worst < REL_TOL, "max relative gradient error {worst:e}");
}

#[test]
fn batch_gradient_is_mean_of_example_gradients() {
    let dims = LstmDims { input: 2, hidden1: 3, hidden2: 2, output: 2, lookback: 4 };
    let m = LstmModel::new(dims, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut set = DenseSet::new(dims.window_len(), 2);
    for _ in 0..6 {
        set.push(&random_vec(&mut rng, dims.window_len(), 1.0), &random_vec(&mut rng, 2, 1.0));
    }
    let all: Vec<usize> = (0..6).collect();
    let mut batch = vec![0.0; m.params().len()];
    batch_loss_grad(&m, &set, &all, &mut batch).unwrap();

    let mut mean = vec![0.0; m.params().len()];
    let mut single = vec![0.0; m.params().len()];
    for i in 0..6 {
        batch_loss_grad(&m, &set, &[i], &mut single).unwrap();
        for (acc, g) in mean.iter_mut().zip(&single) {
            *acc += g / 6.0;
        }
    }
    for (a, b) in batch.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mlp_outputs_stay_strictly_inside_unit_interval() {
    let mut m = MlpModel::new(&MlpModel::DEFAULT_SIZES, 12).unwrap();
    // Large weights push the tanh head hard toward saturation.
    let big: Vec<f64> = m.params().iter().map(|p| p * 3.0).collect();
    m.params_mut().copy_from_slice(&big);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cache = MlpCache::default();
    for _ in 0..10_000 {
        let x = random_vec(&mut rng, 6, 1.0);
        for &y in m.forward(&x, &mut cache).unwrap() {
            assert!(y > -1.0 && y < 1.0, "output {y}");
        }
    }
}
