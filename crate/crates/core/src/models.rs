//! Glue between recorded data and the learners: feature extraction and
//! training entry points for the predictor, classifier and corrector.

use serde::{Deserialize, Serialize};

use derfdd_ml::{
    train, ConfusionMatrix, DenseSet, KnnModel, LstmDims, LstmModel, MlpModel, TrainConfig, TrainOutcome,
};

use crate::dataset::{split_indices, Dataset, RecordedTrace};
use crate::{Error, FaultClass, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnSettings {
    pub k: usize,
    /// Number of consecutive v_star samples in a feature (1 = instantaneous).
    pub window: usize,
    /// Maximum stored exemplars, drawn per class.
    pub cap: usize,
}

impl Default for KnnSettings {
    fn default() -> Self {
        KnnSettings { k: 5, window: 20, cap: 50_000 }
    }
}

impl KnnSettings {
    pub fn dim(&self) -> usize {
        3 * self.window
    }
}

/// v_star rows `target - window + 1 ..= target`, time-major.
pub fn knn_feature(trace: &RecordedTrace, target: usize, window: usize, out: &mut Vec<f64>) -> Result<()> {
    if window == 0 || window > target + 1 {
        return Err(Error::Contract(format!("feature window {window} does not fit before row {target}")));
    }
    out.clear();
    for k in target + 1 - window..=target {
        out.extend_from_slice(&trace.v_star[k].to_array());
    }
    Ok(())
}

/// Features and class indices for every window in `d`.
pub fn knn_features(d: &Dataset, window: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if window > d.lookback() + 1 {
        return Err(Error::Config(format!("KNN window {window} exceeds lookback + 1 = {}", d.lookback() + 1)));
    }
    let mut feats = Vec::with_capacity(d.len() * 3 * window);
    let mut labels = Vec::with_capacity(d.len());
    let mut buf = Vec::with_capacity(3 * window);
    for i in 0..d.len() {
        let (tr, k) = d.target_row(i);
        knn_feature(tr, k, window, &mut buf)?;
        feats.extend_from_slice(&buf);
        labels.push(tr.label[k].index());
    }
    Ok((feats, labels))
}

pub fn train_knn(d: &Dataset, s: &KnnSettings, seed: u64) -> Result<KnnModel> {
    let (f, l) = knn_features(d, s.window)?;
    Ok(KnnModel::fit_capped(f, l, s.dim(), s.k, FaultClass::COUNT, s.cap, seed)?)
}

/// Confusion matrix of `model` over the windows of `d`.
pub fn evaluate_knn(model: &KnnModel, d: &Dataset, window: usize) -> Result<ConfusionMatrix> {
    let (f, l) = knn_features(d, window)?;
    let dim = 3 * window;
    let mut cm = ConfusionMatrix::new(FaultClass::COUNT);
    for (x, &truth) in f.chunks_exact(dim).zip(&l) {
        cm.record(truth, model.classify(x)?.label)?;
    }
    Ok(cm)
}

pub fn train_lstm(train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig, init_seed: u64) -> Result<TrainOutcome<LstmModel>> {
    let dims = LstmDims { lookback: train_set.lookback(), ..LstmDims::DEFAULT };
    let model = LstmModel::new(dims, init_seed)?;
    let mut out = train(&model, train_set, val_set, cfg)?;
    out.model.epochs = out.best_epoch;
    Ok(out)
}

/// One corrector example: `(v_g, i_inv)` at a sample and the v_star the
/// controller produced there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectorSample {
    pub input: [f64; 6],
    pub target: [f64; 3],
    pub label: FaultClass,
}

/// Every `stride`-th NORMAL row of the traces.
pub fn normal_samples(traces: &[RecordedTrace], stride: usize) -> Vec<CorrectorSample> {
    let stride = stride.max(1);
    traces
        .iter()
        .flat_map(|tr| (0..tr.len()).step_by(stride).map(move |k| (tr, k)))
        .filter(|(tr, k)| tr.label[*k] == FaultClass::Normal)
        .map(|(tr, k)| {
            let (g, i) = (tr.v_g[k], tr.i_inv[k]);
            CorrectorSample { input: [g.a, g.b, g.c, i.a, i.b, i.c], target: tr.v_star[k].to_array(), label: tr.label[k] }
        })
        .collect()
}

/// Trains the corrector on NORMAL samples only, with a seeded split into
/// training and validation parts.
pub fn train_mlp(
    samples: &[CorrectorSample],
    fraction: f64,
    cfg: &TrainConfig,
    init_seed: u64,
    split_seed: u64,
) -> Result<TrainOutcome<MlpModel>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no NORMAL samples for the corrector".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.label != FaultClass::Normal) {
        return Err(Error::Contract(format!("corrector training data contains a {} sample", bad.label)));
    }
    let (tr_idx, va_idx) = split_indices(samples.len(), fraction, split_seed, false)?;
    let to_set = |idx: &[usize]| {
        let mut s = DenseSet::new(6, 3);
        for &i in idx {
            s.push(&samples[i].input, &samples[i].target);
        }
        s
    };
    let model = MlpModel::new(&MlpModel::DEFAULT_SIZES, init_seed)?;
    let mut out = train(&model, &to_set(&tr_idx), &to_set(&va_idx), cfg)?;
    out.model.epochs = out.best_epoch;
    Ok(out)
}
