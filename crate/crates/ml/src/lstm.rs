//! Two-layer LSTM sequence regressor.
//!
//! Cell formulation (no peepholes), gates stacked in the order
//! input, forget, output, candidate:
//!
//! ```text
//! z_t = W x_t + U h_{t-1} + b
//! i = sigmoid(z_i)  f = sigmoid(z_f)  o = sigmoid(z_o)  g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! The second layer consumes the hidden sequence of the first, and a linear
//! head maps the final hidden state of the second layer to the outputs.
//!
//! Parameter layout (the order also used by checkpoints), per layer:
//! `W` column-major `4H x I`, `U` column-major `4H x H`, `b` of length `4H`;
//! then the head `W_h` column-major `O x H2` followed by `b_h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, gemv_colmajor_acc, gemv_t_colmajor, outer_acc_colmajor, sigmoid};
use crate::train::Regressor;
use crate::{MlError, Result};

/// Gate index inside the stacked `4H` pre-activation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
    pub lookback: usize,
}

impl LstmDims {
    /// 9 input channels, 32 and 64 units, 3 outputs, lookback 20.
    pub const DEFAULT: LstmDims = LstmDims {
        input: 9,
        hidden1: 32,
        hidden2: 64,
        output: 3,
        lookback: 20,
    };

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden1 == 0 || self.hidden2 == 0 || self.output == 0 || self.lookback == 0 {
            return Err(MlError::Config(format!("all LSTM dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn layer_len(input: usize, hidden: usize) -> usize {
        4 * hidden * input + 4 * hidden * hidden + 4 * hidden
    }

    pub fn param_count(&self) -> usize {
        Self::layer_len(self.input, self.hidden1)
            + Self::layer_len(self.hidden1, self.hidden2)
            + self.output * self.hidden2
            + self.output
    }

    pub fn window_len(&self) -> usize {
        self.input * self.lookback
    }

    pub(crate) fn layer(&self, index: usize) -> LayerLayout {
        match index {
            0 => LayerLayout::new(0, self.input, self.hidden1),
            1 => LayerLayout::new(Self::layer_len(self.input, self.hidden1), self.hidden1, self.hidden2),
            _ => unreachable!("two-layer network"),
        }
    }

    fn head_offset(&self) -> usize {
        Self::layer_len(self.input, self.hidden1) + Self::layer_len(self.hidden1, self.hidden2)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerLayout {
    pub input: usize,
    pub hidden: usize,
    pub w: usize,
    pub u: usize,
    pub b: usize,
    pub end: usize,
}

impl LayerLayout {
    fn new(offset: usize, input: usize, hidden: usize) -> Self {
        let w = offset;
        let u = w + 4 * hidden * input;
        let b = u + 4 * hidden * hidden;
        LayerLayout { input, hidden, w, u, b, end: b + 4 * hidden }
    }
}

/// Activations recorded by a forward pass, needed for BPTT.
#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    dims: Option<LstmDims>,
    version: u64,
    layers: [LayerCache; 2],
    output: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    /// `T x I` inputs.
    xs: Vec<f64>,
    /// `(T + 1) x H`, row 0 is the zero initial state.
    hs: Vec<f64>,
    cs: Vec<f64>,
    /// `T x 4H` activated gates.
    gates: Vec<f64>,
    /// `T x H` tanh of the cell state.
    tc: Vec<f64>,
}

impl LstmCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Final hidden state of the second layer.
    pub fn final_hidden(&self) -> &[f64] {
        match self.dims {
            Some(d) => &self.layers[1].hs[d.lookback * d.hidden2..(d.lookback + 1) * d.hidden2],
            None => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    dims: LstmDims,
    params: Vec<f64>,
    /// Bumped on every mutable access to the parameters so that stale caches
    /// can be detected.
    version: u64,
    pub seed: u64,
    pub epochs: usize,
}

impl LstmModel {
    /// Uniform initialisation in `±1/sqrt(fan_in)`; the gate fan-in is
    /// `input + hidden`, the head fan-in is `hidden2`.
    pub fn new(dims: LstmDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; dims.param_count()];
        for l in 0..2 {
            let lay = dims.layer(l);
            let bound = 1.0 / ((lay.input + lay.hidden) as f64).sqrt();
            for p in &mut params[lay.w..lay.end] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let bound = 1.0 / (dims.hidden2 as f64).sqrt();
        for p in &mut params[dims.head_offset()..] {
            *p = rng.gen_range(-bound..bound);
        }
        Ok(LstmModel { dims, params, version: 0, seed, epochs: 0 })
    }

    pub fn zeros(dims: LstmDims) -> Result<Self> {
        dims.validate()?;
        Ok(LstmModel { dims, params: vec![0.0; dims.param_count()], version: 0, seed: 0, epochs: 0 })
    }

    pub fn from_params(dims: LstmDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(MlError::Shape(format!(
                "LSTM expects {} parameters, got {}",
                dims.param_count(),
                params.len()
            )));
        }
        Ok(LstmModel { dims, params, version: 0, seed: 0, epochs: 0 })
    }

    pub fn dims(&self) -> LstmDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Weight of `gate` connecting input column `col` to unit `unit` in
    /// `layer` (0 or 1). `recurrent` selects `U` instead of `W`.
    pub fn weight(&self, layer: usize, recurrent: bool, gate: Gate, unit: usize, col: usize) -> f64 {
        let lay = self.dims.layer(layer);
        let rows = 4 * lay.hidden;
        let base = if recurrent { lay.u } else { lay.w };
        self.params[base + col * rows + gate as usize * lay.hidden + unit]
    }

    pub fn bias(&self, layer: usize, gate: Gate, unit: usize) -> f64 {
        let lay = self.dims.layer(layer);
        self.params[lay.b + gate as usize * lay.hidden + unit]
    }

    pub fn head_weight(&self, out: usize, col: usize) -> f64 {
        self.params[self.dims.head_offset() + col * self.dims.output + out]
    }

    pub fn head_bias(&self, out: usize) -> f64 {
        self.params[self.dims.head_offset() + self.dims.output * self.dims.hidden2 + out]
    }

    /// Runs the network over one `lookback x input` window (time-major) and
    /// returns the prediction. Activations are kept in `cache`.
    pub fn forward<'c>(&self, window: &[f64], cache: &'c mut LstmCache) -> Result<&'c [f64]> {
        let d = self.dims;
        if window.len() != d.window_len() {
            return Err(MlError::Shape(format!(
                "LSTM window must hold {} x {} = {} values, got {}",
                d.lookback,
                d.input,
                d.window_len(),
                window.len()
            )));
        }
        cache.dims = Some(d);
        cache.version = self.version;
        layer_forward(&self.params, d.layer(0), d.lookback, window, &mut cache.layers[0]);
        let (first, second) = cache.layers.split_at_mut(1);
        let h1 = &first[0].hs[d.hidden1..];
        layer_forward(&self.params, d.layer(1), d.lookback, h1, &mut second[0]);

        let head = d.head_offset();
        let hw = &self.params[head..head + d.output * d.hidden2];
        let hb = &self.params[head + d.output * d.hidden2..head + d.output * d.hidden2 + d.output];
        cache.output.clear();
        cache.output.extend_from_slice(hb);
        let h_last = &cache.layers[1].hs[d.lookback * d.hidden2..(d.lookback + 1) * d.hidden2];
        gemv_colmajor_acc(hw, d.output, h_last, &mut cache.output);
        Ok(&cache.output)
    }

    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut cache = LstmCache::default();
        Ok(self.forward(window, &mut cache)?.to_vec())
    }

    /// Backpropagation through time. Adds the gradient of
    /// `sum_k grad_out[k] * y[k]` with respect to every parameter into `grad`.
    pub fn backward(&self, cache: &LstmCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        let d = self.dims;
        match cache.dims {
            Some(cd) if cd == d => {}
            Some(cd) => {
                return Err(MlError::Contract(format!("cache built for {cd:?}, model is {d:?}")));
            }
            None => return Err(MlError::Contract("backward called before forward".into())),
        }
        if cache.version != self.version {
            return Err(MlError::Contract("stale cache: parameters changed since the forward pass".into()));
        }
        if grad_out.len() != d.output {
            return Err(MlError::Shape(format!("grad_out has {} entries, expected {}", grad_out.len(), d.output)));
        }
        if grad.len() != self.params.len() {
            return Err(MlError::Shape(format!("grad has {} entries, expected {}", grad.len(), self.params.len())));
        }

        let t = d.lookback;
        let head = d.head_offset();
        let h_last = &cache.layers[1].hs[t * d.hidden2..(t + 1) * d.hidden2];
        {
            let (gw, gb) = grad[head..head + d.output * d.hidden2 + d.output].split_at_mut(d.output * d.hidden2);
            outer_acc_colmajor(gw, d.output, grad_out, h_last);
            for (g, go) in gb.iter_mut().zip(grad_out) {
                *g += go;
            }
        }
        // dL/dh of layer 2, nonzero only at the last step.
        let mut dh2 = vec![0.0; t * d.hidden2];
        gemv_t_colmajor(
            &self.params[head..head + d.output * d.hidden2],
            d.output,
            grad_out,
            &mut dh2[(t - 1) * d.hidden2..],
        );
        let mut dx2 = vec![0.0; t * d.hidden1];
        layer_backward(&self.params, grad, d.layer(1), t, &cache.layers[1], &dh2, Some(&mut dx2));
        layer_backward(&self.params, grad, d.layer(0), t, &cache.layers[0], &dx2, None);
        Ok(())
    }
}

fn layer_forward(params: &[f64], lay: LayerLayout, steps: usize, xs: &[f64], cache: &mut LayerCache) {
    let (ni, h) = (lay.input, lay.hidden);
    let rows = 4 * h;
    let w = &params[lay.w..lay.u];
    let u = &params[lay.u..lay.b];
    let b = &params[lay.b..lay.end];

    cache.xs.clear();
    cache.xs.extend_from_slice(&xs[..steps * ni]);
    cache.hs.clear();
    cache.hs.resize((steps + 1) * h, 0.0);
    cache.cs.clear();
    cache.cs.resize((steps + 1) * h, 0.0);
    cache.gates.clear();
    cache.gates.resize(steps * rows, 0.0);
    cache.tc.clear();
    cache.tc.resize(steps * h, 0.0);

    for step in 0..steps {
        let z = &mut cache.gates[step * rows..(step + 1) * rows];
        z.copy_from_slice(b);
        gemv_colmajor_acc(w, rows, &xs[step * ni..(step + 1) * ni], z);
        gemv_colmajor_acc(u, rows, &cache.hs[step * h..(step + 1) * h], z);
        for v in &mut z[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut z[3 * h..] {
            *v = v.tanh();
        }
        let (prev, next) = cache.cs.split_at_mut((step + 1) * h);
        let c_prev = &prev[step * h..];
        let c = &mut next[..h];
        let tc = &mut cache.tc[step * h..(step + 1) * h];
        let hn = &mut cache.hs[(step + 1) * h..(step + 2) * h];
        for k in 0..h {
            let (ig, fg, og, gg) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
            c[k] = fg * c_prev[k] + ig * gg;
            tc[k] = c[k].tanh();
            hn[k] = og * tc[k];
        }
    }
}

fn layer_backward(
    params: &[f64],
    grad: &mut [f64],
    lay: LayerLayout,
    steps: usize,
    cache: &LayerCache,
    dh_above: &[f64],
    mut dx_out: Option<&mut [f64]>,
) {
    let (ni, h) = (lay.input, lay.hidden);
    let rows = 4 * h;
    let mut dh_rec = vec![0.0; h];
    let mut dc_rec = vec![0.0; h];
    let mut dz = vec![0.0; rows];

    for step in (0..steps).rev() {
        let gates = &cache.gates[step * rows..(step + 1) * rows];
        let tc = &cache.tc[step * h..(step + 1) * h];
        let c_prev = &cache.cs[step * h..(step + 1) * h];
        for k in 0..h {
            let (ig, fg, og, gg) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = dh_above[step * h + k] + dh_rec[k];
            let dc = dc_rec[k] + dh * og * (1.0 - tc[k] * tc[k]);
            dz[k] = dc * gg * ig * (1.0 - ig);
            dz[h + k] = dc * c_prev[k] * fg * (1.0 - fg);
            dz[2 * h + k] = dh * tc[k] * og * (1.0 - og);
            dz[3 * h + k] = dc * ig * (1.0 - gg * gg);
            dc_rec[k] = dc * fg;
        }
        let x = &cache.xs[step * ni..(step + 1) * ni];
        let h_prev = &cache.hs[step * h..(step + 1) * h];
        outer_acc_colmajor(&mut grad[lay.w..lay.u], rows, &dz, x);
        outer_acc_colmajor(&mut grad[lay.u..lay.b], rows, &dz, h_prev);
        for (g, d) in grad[lay.b..lay.end].iter_mut().zip(&dz) {
            *g += d;
        }
        let u = &params[lay.u..lay.b];
        for (j, r) in dh_rec.iter_mut().enumerate() {
            *r = dot(&u[j * rows..(j + 1) * rows], &dz);
        }
        if let Some(dx) = dx_out.as_deref_mut() {
            gemv_t_colmajor(&params[lay.w..lay.u], rows, &dz, &mut dx[step * ni..(step + 1) * ni]);
        }
    }
}

impl Regressor for LstmModel {
    type Cache = LstmCache;

    fn input_len(&self) -> usize {
        self.dims.window_len()
    }

    fn output_len(&self) -> usize {
        self.dims.output
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        LstmModel::params_mut(self)
    }

    fn forward_cached(&self, input: &[f64], cache: &mut LstmCache, out: &mut [f64]) -> Result<()> {
        let y = self.forward(input, cache)?;
        out.copy_from_slice(y);
        Ok(())
    }

    fn backward_cached(&self, cache: &LstmCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        self.backward(cache, grad_out, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LstmDims {
        LstmDims { input: 2, hidden1: 3, hidden2: 4, output: 2, lookback: 5 }
    }

    #[test]
    fn default_dims_match_the_published_architecture() {
        let d = LstmDims::DEFAULT;
        assert_eq!((d.input, d.hidden1, d.hidden2, d.output, d.lookback), (9, 32, 64, 3, 20));
        // 4*32*(9+32+1) + 4*64*(32+64+1) + 3*64 + 3
        assert_eq!(d.param_count(), 5376 + 24832 + 195);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = LstmModel::zeros(LstmDims::DEFAULT).unwrap();
        let y = m.predict(&vec![0.0; 180]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let m = LstmModel::new(tiny(), 1).unwrap();
        assert!(matches!(m.predict(&[0.0; 3]), Err(MlError::Shape(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let m = LstmModel::new(tiny(), 3).unwrap();
        let mut cache = LstmCache::default();
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        m.forward(&x, &mut cache).unwrap();
        let mut g = vec![0.0; m.params().len()];
        m.backward(&cache, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = LstmModel::new(tiny(), 3).unwrap();
        let mut cache = LstmCache::default();
        m.forward(&[0.1; 10], &mut cache).unwrap();
        m.params_mut()[0] += 1.0;
        let mut g = vec![0.0; m.params().len()];
        assert!(matches!(m.backward(&cache, &[1.0, 0.0], &mut g), Err(MlError::Contract(_))));
        let fresh = LstmCache::default();
        assert!(matches!(m.backward(&fresh, &[1.0, 0.0], &mut g), Err(MlError::Contract(_))));
    }

    #[test]
    fn gates_stay_in_range() {
        let m = LstmModel::new(tiny(), 9).unwrap();
        let mut cache = LstmCache::default();
        let x: Vec<f64> = (0..10).map(|i| 5.0 * (i as f64).cos()).collect();
        m.forward(&x, &mut cache).unwrap();
        for layer in &cache.layers {
            let h = layer.tc.len() / 5;
            for step in layer.gates.chunks(4 * h) {
                assert!(step[..3 * h].iter().all(|&g| g > 0.0 && g < 1.0));
                assert!(step[3 * h..].iter().all(|&g| g > -1.0 && g < 1.0));
            }
        }
    }
}
