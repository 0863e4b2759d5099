//! Minibatch Adam on mean squared error with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Adam, MlError, Result};

/// A differentiable model with a flat parameter vector.
pub trait Regressor: Clone {
    type Cache: Default;

    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward_cached(&self, input: &[f64], cache: &mut Self::Cache, out: &mut [f64]) -> Result<()>;
    /// Accumulates `d(grad_out . y)/d(params)` into `grad`.
    fn backward_cached(&self, cache: &Self::Cache, grad_out: &[f64], grad: &mut [f64]) -> Result<()>;
}

/// Indexed supervised examples. Implementations may build inputs lazily.
pub trait SupervisedSet {
    fn len(&self) -> usize;
    fn input(&self, index: usize, out: &mut [f64]);
    fn target(&self, index: usize, out: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Plain in-memory examples stored row by row.
#[derive(Debug, Clone, Default)]
pub struct DenseSet {
    pub input_len: usize,
    pub target_len: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl DenseSet {
    pub fn new(input_len: usize, target_len: usize) -> Self {
        DenseSet { input_len, target_len, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) {
        assert_eq!(input.len(), self.input_len);
        assert_eq!(target.len(), self.target_len);
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
    }
}

impl SupervisedSet for DenseSet {
    fn len(&self) -> usize {
        self.targets.len().checked_div(self.target_len).unwrap_or(0)
    }

    fn input(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.inputs[i * self.input_len..(i + 1) * self.input_len]);
    }

    fn target(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.targets[i * self.target_len..(i + 1) * self.target_len]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainConfig {
    /// Predictor settings: lr 1e-4, batch 32, 50 epochs.
    pub fn lstm_default() -> Self {
        TrainConfig { learning_rate: 1e-4, batch_size: 32, max_epochs: 50, ..Self::base() }
    }

    /// Corrector settings: lr 1e-3, batch 16, 30 epochs.
    pub fn mlp_default() -> Self {
        TrainConfig { learning_rate: 1e-3, batch_size: 16, max_epochs: 30, ..Self::base() }
    }

    fn base() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(MlError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(MlError::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(MlError::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience-based stopping rule on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Records a validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean over examples and outputs of the squared error, together with its
/// gradient (accumulated into `grad`, already divided by the count).
pub fn batch_loss_grad<M: Regressor, S: SupervisedSet + ?Sized>(
    model: &M,
    set: &S,
    indices: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    let (ni, no) = (model.input_len(), model.output_len());
    let mut x = vec![0.0; ni];
    let mut y = vec![0.0; no];
    let mut target = vec![0.0; no];
    let mut g_out = vec![0.0; no];
    let mut cache = M::Cache::default();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / (indices.len() * no) as f64;
    let mut sse = 0.0;
    for &i in indices {
        set.input(i, &mut x);
        set.target(i, &mut target);
        model.forward_cached(&x, &mut cache, &mut y)?;
        for k in 0..no {
            let e = y[k] - target[k];
            sse += e * e;
            g_out[k] = 2.0 * e * scale;
        }
        model.backward_cached(&cache, &g_out, grad)?;
    }
    Ok(sse * scale)
}

/// Mean squared error of `model` over a whole set.
pub fn evaluate_mse<M: Regressor, S: SupervisedSet + ?Sized>(model: &M, set: &S) -> Result<f64> {
    if set.is_empty() {
        return Err(MlError::Empty("evaluation set".into()));
    }
    let (ni, no) = (model.input_len(), model.output_len());
    let mut x = vec![0.0; ni];
    let mut y = vec![0.0; no];
    let mut target = vec![0.0; no];
    let mut cache = M::Cache::default();
    let mut sse = 0.0;
    for i in 0..set.len() {
        set.input(i, &mut x);
        set.target(i, &mut target);
        model.forward_cached(&x, &mut cache, &mut y)?;
        sse += y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sse / (set.len() * no) as f64)
}

/// Trains `model` in place of a copy and returns the best-validation weights.
///
/// Every epoch shuffles the training indices with a generator seeded from
/// `cfg.seed`, so identical inputs give bit-identical histories.
pub fn train<M, S, V>(model: &M, train_set: &S, val_set: &V, cfg: &TrainConfig) -> Result<TrainOutcome<M>>
where
    M: Regressor,
    S: SupervisedSet + ?Sized,
    V: SupervisedSet + ?Sized,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(MlError::Empty("training set".into()));
    }
    if val_set.is_empty() {
        return Err(MlError::Empty("validation set".into()));
    }
    let mut current = model.clone();
    let mut best = model.clone();
    let n_params = current.params().len();
    let mut opt = Adam::new(n_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss = batch_loss_grad(&current, train_set, batch, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(MlError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(current.params_mut(), &grad)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = evaluate_mse(&current, val_set)?;
        if !val_loss.is_finite() {
            return Err(MlError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best.clone_from(&current);
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch: stopper.best_epoch(), stopped_early })
}
