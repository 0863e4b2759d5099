//! Regression errors and classification scores.

use crate::{MlError, Result};

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(MlError::Shape(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(MlError::Empty("metric input".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Column-wise MAE of row-major data with `cols` columns.
pub fn mae_per_column(pred: &[f64], target: &[f64], cols: usize) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    if cols == 0 || !pred.len().is_multiple_of(cols) {
        return Err(MlError::Shape(format!("{} values do not split into {cols} columns", pred.len())));
    }
    let rows = pred.len() / cols;
    let mut acc = vec![0.0; cols];
    for (p, t) in pred.chunks(cols).zip(target.chunks(cols)) {
        for c in 0..cols {
            acc[c] += (p[c] - t[c]).abs();
        }
    }
    Ok(acc.into_iter().map(|s| s / rows as f64).collect())
}

/// Square count matrix: rows are the true class, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(MlError::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        if truth.is_empty() {
            return Err(MlError::Empty("confusion matrix input".into()));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.n || pred >= self.n {
            return Err(MlError::Shape(format!("label out of range for {} classes", self.n)));
        }
        self.counts[truth * self.n + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.n).map(|p| self.get(truth, p)).sum()
    }

    /// `None` when the class never occurs in the ground truth.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row = self.row_total(class);
        (row > 0).then(|| self.get(class, class) as f64 / row as f64)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(MlError::Shape("confusion matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(MlError::Empty("confusion matrix has no entries".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}
