//! Dense multi-output regressor: rectifier hidden layers, `tanh` output.
//!
//! Layer `l` stores its weights column-major (`out x in`) followed by its
//! biases; layers are laid out back to back in one flat vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{gemv_colmajor_acc, gemv_t_colmajor, outer_acc_colmajor};
use crate::train::Regressor;
use crate::{MlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
    version: u64,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    sizes: Vec<usize>,
    version: u64,
    /// Activations of every layer, input first.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl MlpModel {
    /// 6 inputs, hidden layers of 64 and 128, 3 outputs.
    pub const DEFAULT_SIZES: [usize; 4] = [6, 64, 128, 3];

    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        m.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for pair in sizes.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            for p in &mut m.params[off..off + n_out * n_in + n_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += n_out * n_in + n_out;
        }
        Ok(m)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(MlError::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|p| p[1] * p[0] + p[1]).sum();
        Ok(MlpModel { sizes: sizes.to_vec(), params: vec![0.0; n], version: 0, seed: 0, epochs: 0 })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        if params.len() != m.params.len() {
            return Err(MlError::Shape(format!(
                "MLP {sizes:?} expects {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut MlpCache) -> Result<&'c [f64]> {
        if input.len() != self.sizes[0] {
            return Err(MlError::Shape(format!("MLP expects {} inputs, got {}", self.sizes[0], input.len())));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(MlError::Contract("non-finite MLP input".into()));
        }
        cache.sizes.clone_from(&self.sizes);
        cache.version = self.version;
        cache.acts.resize(self.sizes.len(), Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);

        let last = self.sizes.len() - 2;
        let mut off = 0;
        for (l, pair) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let w = &self.params[off..off + n_out * n_in];
            let b = &self.params[off + n_out * n_in..off + n_out * n_in + n_out];
            let (lo, hi) = cache.acts.split_at_mut(l + 1);
            let a = &mut hi[0];
            a.clear();
            a.extend_from_slice(b);
            gemv_colmajor_acc(w, n_out, &lo[l], a);
            if l == last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            off += n_out * n_in + n_out;
        }
        Ok(cache.output())
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = MlpCache::default();
        Ok(self.forward(input, &mut cache)?.to_vec())
    }

    /// Adds the gradient of `sum_k grad_out[k] * y[k]` into `grad`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        if cache.sizes != self.sizes || cache.acts.len() != self.sizes.len() {
            return Err(MlError::Contract("MLP cache does not belong to this model".into()));
        }
        if cache.version != self.version {
            return Err(MlError::Contract("stale cache: parameters changed since the forward pass".into()));
        }
        let n_layers = self.sizes.len() - 1;
        if grad_out.len() != self.sizes[n_layers] {
            return Err(MlError::Shape(format!("grad_out has {} entries", grad_out.len())));
        }
        if grad.len() != self.params.len() {
            return Err(MlError::Shape(format!("grad has {} entries", grad.len())));
        }

        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, p| {
                let o = *acc;
                *acc += p[1] * p[0] + p[1];
                Some(o)
            })
            .collect();

        // delta = dL/d(pre-activation) of the current layer
        let out = &cache.acts[n_layers];
        let mut delta: Vec<f64> = grad_out.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a_in = &cache.acts[l];
            outer_acc_colmajor(&mut grad[off..off + n_out * n_in], n_out, &delta, a_in);
            for (g, d) in grad[off + n_out * n_in..off + n_out * n_in + n_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                gemv_t_colmajor(&self.params[off..off + n_out * n_in], n_out, &delta, &mut prev);
                for (p, a) in prev.iter_mut().zip(a_in) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

impl Regressor for MlpModel {
    type Cache = MlpCache;

    fn input_len(&self) -> usize {
        self.sizes[0]
    }

    fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        MlpModel::params_mut(self)
    }

    fn forward_cached(&self, input: &[f64], cache: &mut MlpCache, out: &mut [f64]) -> Result<()> {
        let y = self.forward(input, cache)?;
        out.copy_from_slice(y);
        Ok(())
    }

    fn backward_cached(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        self.backward(cache, grad_out, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_shapes() {
        let m = MlpModel::new(&MlpModel::DEFAULT_SIZES, 0).unwrap();
        assert_eq!(m.params().len(), 6 * 64 + 64 + 64 * 128 + 128 + 128 * 3 + 3);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = MlpModel::zeros(&MlpModel::DEFAULT_SIZES).unwrap();
        assert_eq!(m.predict(&[0.3, -0.2, 0.9, 1.0, -1.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let m = MlpModel::new(&MlpModel::DEFAULT_SIZES, 0).unwrap();
        assert!(matches!(m.predict(&[0.0; 5]), Err(MlError::Shape(_))));
        assert!(matches!(m.predict(&[f64::NAN; 6]), Err(MlError::Contract(_))));
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(MlpModel::zeros(&[6]).is_err());
        assert!(MlpModel::zeros(&[6, 0, 3]).is_err());
    }
}
