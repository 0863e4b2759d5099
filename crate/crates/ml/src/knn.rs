//! Exact k-nearest-neighbour classification under Euclidean distance.
//!
//! Neighbours are ranked by `(squared distance, exemplar index)`, so the
//! neighbour set is unique even when distances tie. The vote is a simple
//! majority; tied classes are separated by the smallest summed distance of
//! their neighbours and then by the lowest class index.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{MlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    dim: usize,
    k: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    pub label: usize,
    /// `(exemplar index, Euclidean distance)`, nearest first.
    pub neighbors: Vec<(usize, f64)>,
}

impl KnnModel {
    pub fn fit(features: Vec<f64>, labels: Vec<usize>, dim: usize, k: usize, n_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(MlError::Config("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(MlError::Shape(format!(
                "{} feature values for {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(MlError::Empty("KNN exemplar set".into()));
        }
        if k == 0 || k > labels.len() {
            return Err(MlError::Config(format!("k = {k} must lie in 1..={}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(MlError::Config(format!("label {bad} outside {n_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(MlError::Contract("non-finite exemplar feature".into()));
        }
        Ok(KnnModel { dim, k, n_classes, features, labels })
    }

    /// Like [`fit`](Self::fit) but keeps at most `cap` exemplars, drawn per
    /// class in proportion to class frequency (at least one per present
    /// class). Selected exemplars keep their original relative order.
    pub fn fit_capped(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        k: usize,
        n_classes: usize,
        cap: usize,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() <= cap {
            return Self::fit(features, labels, dim, k, n_classes);
        }
        let keep = stratified_subsample(&labels, n_classes, cap, seed);
        let mut f = Vec::with_capacity(keep.len() * dim);
        let mut l = Vec::with_capacity(keep.len());
        for &i in &keep {
            f.extend_from_slice(&features[i * dim..(i + 1) * dim]);
            l.push(labels[i]);
        }
        Self::fit(f, l, dim, k, n_classes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn exemplar(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Indices and squared distances of the `k` nearest exemplars.
    ///
    /// Scans exemplars in index order and abandons a candidate as soon as its
    /// running sum reaches the current `k`-th best; partial sums of squares
    /// never decrease, and a later index loses every tie, so the result equals
    /// a full sort.
    pub fn nearest(&self, query: &[f64]) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(MlError::Shape(format!("query has {} values, model expects {}", query.len(), self.dim)));
        }
        let k = self.k;
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let mut bound = f64::INFINITY;
        for (idx, ex) in self.features.chunks_exact(self.dim).enumerate() {
            let mut d = 0.0;
            let mut abandoned = false;
            for (chunk_q, chunk_e) in query.chunks(8).zip(ex.chunks(8)) {
                for (q, e) in chunk_q.iter().zip(chunk_e) {
                    let diff = q - e;
                    d += diff * diff;
                }
                if d >= bound {
                    abandoned = true;
                    break;
                }
            }
            if abandoned {
                continue;
            }
            let pos = best.partition_point(|&(_, bd)| bd <= d);
            best.insert(pos, (idx, d));
            if best.len() > k {
                best.pop();
            }
            if best.len() == k {
                bound = best[k - 1].1;
            }
        }
        Ok(best)
    }

    pub fn classify(&self, query: &[f64]) -> Result<KnnPrediction> {
        let near = self.nearest(query)?;
        let neighbors: Vec<(usize, f64)> = near.iter().map(|&(i, d2)| (i, d2.sqrt())).collect();
        let label = vote(&neighbors, &self.labels, self.n_classes);
        Ok(KnnPrediction { label, neighbors })
    }
}

/// Majority vote with the documented tie-break.
pub fn vote(neighbors: &[(usize, f64)], labels: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    let mut dist = vec![0.0f64; n_classes];
    for &(i, d) in neighbors {
        counts[labels[i]] += 1;
        dist[labels[i]] += d;
    }
    let mut winner = 0;
    for c in 1..n_classes {
        let better = counts[c] > counts[winner] || (counts[c] == counts[winner] && dist[c] < dist[winner]);
        if better {
            winner = c;
        }
    }
    winner
}

/// Picks `cap` indices stratified by label; returns them sorted.
pub fn stratified_subsample(labels: &[usize], n_classes: usize, cap: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(cap);
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        let quota = ((members.len() as f64 * cap as f64 / n as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quota]);
    }
    keep.sort_unstable();
    keep
}
