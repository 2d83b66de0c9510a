//! Deterministic compact policies and global state normalization.
//!
//! Flat parameter layout, fixed for every architecture:
//!
//! ```text
//! linear: W (act × obs, row-major), b (act)
//! mlp:    W1 (hidden × obs, row-major), b1 (hidden), W2 (act × hidden, row-major), b2 (act)
//! ```

use serde::{Deserialize, Serialize};

use crate::blackbox::ParamVector;
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Linear,
    /// One tanh hidden layer.
    Mlp,
}

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub arch: Architecture,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_width: usize,
    pub action_bound: f64,
    pub squash: bool,
}

impl PolicySpec {
    pub fn linear(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            arch: Architecture::Linear,
            obs_dim,
            act_dim,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            action_bound: 1.0,
            squash: true,
        }
    }

    pub fn mlp(obs_dim: usize, act_dim: usize, hidden_width: usize) -> Self {
        Self {
            arch: Architecture::Mlp,
            obs_dim,
            act_dim,
            hidden_width,
            action_bound: 1.0,
            squash: true,
        }
    }

    pub fn with_squash(mut self, squash: bool) -> Self {
        self.squash = squash;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::invalid("policy obs_dim and act_dim must be >= 1"));
        }
        if self.arch == Architecture::Mlp && self.hidden_width == 0 {
            return Err(Error::invalid("mlp hidden width must be >= 1"));
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return Err(Error::invalid("action_bound must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self.arch {
            Architecture::Linear => self.act_dim * self.obs_dim + self.act_dim,
            Architecture::Mlp => {
                let h = self.hidden_width;
                h * self.obs_dim + h + self.act_dim * h + self.act_dim
            }
        }
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self.arch {
            Architecture::Linear => vec![(self.act_dim, self.obs_dim)],
            Architecture::Mlp => vec![(self.hidden_width, self.obs_dim), (self.act_dim, self.hidden_width)],
        }
    }

    /// Zero output layer; hidden layer (weights and biases) i.i.d. `N(0, 0.1²)`.
    pub fn initial_params(&self, seed: u64) -> ParamVector {
        let mut values = vec![0.0; self.param_count()];
        if self.arch == Architecture::Mlp {
            let hidden = self.hidden_width * self.obs_dim + self.hidden_width;
            let g = seed::gaussian_vector(seed::derive(seed, tag::INIT, 0), 0, hidden);
            for (v, x) in values.iter_mut().zip(g) {
                *v = 0.1 * x;
            }
        }
        ParamVector::new(values).expect("finite initial parameters")
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim,
                actual: obs.len(),
            });
        }
        Ok(())
    }

    /// `π(obs)` for the flat parameter vector `params`.
    pub fn forward(&self, params: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_obs(obs)?;
        let mut out = vec![0.0; self.act_dim];
        let mut hidden = vec![0.0; self.hidden_width];
        self.forward_into(params, obs, &mut hidden, &mut out);
        Ok(out)
    }

    /// Allocation-free forward pass. Lengths must already be checked.
    pub(crate) fn forward_into(&self, params: &[f64], obs: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        match self.arch {
            Architecture::Linear => affine(params, obs, self.act_dim, out),
            Architecture::Mlp => {
                let split = self.hidden_width * self.obs_dim + self.hidden_width;
                affine(&params[..split], obs, self.hidden_width, hidden);
                for h in hidden.iter_mut() {
                    *h = h.tanh();
                }
                affine(&params[split..], hidden, self.act_dim, out);
            }
        }
        if self.squash {
            let b = self.action_bound;
            for a in out.iter_mut() {
                *a = b * (*a / b).tanh();
            }
        }
    }

    /// Output and `Σ_k upstream_k ∂π_k/∂params` at one input.
    pub fn backward(&self, params: &[f64], obs: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_params(params)?;
        self.check_obs(obs)?;
        if upstream.len() != self.act_dim {
            return Err(Error::DimensionMismatch {
                expected: self.act_dim,
                actual: upstream.len(),
            });
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut hidden = vec![0.0; self.hidden_width];
        let mut out = vec![0.0; self.act_dim];
        self.forward_into(params, obs, &mut hidden, &mut out);
        let mut delta: Vec<f64> = upstream.to_vec();
        if self.squash {
            let b = self.action_bound;
            for (d, a) in delta.iter_mut().zip(&out) {
                let t = a / b;
                *d *= 1.0 - t * t;
            }
        }
        match self.arch {
            Architecture::Linear => affine_backward(obs, &delta, &mut grad),
            Architecture::Mlp => {
                let h = self.hidden_width;
                let split = h * self.obs_dim + h;
                let w2 = &params[split..split + self.act_dim * h];
                affine_backward(&hidden, &delta, &mut grad[split..]);
                let mut dh = vec![0.0; h];
                for (k, dk) in delta.iter().enumerate() {
                    for j in 0..h {
                        dh[j] += dk * w2[k * h + j];
                    }
                }
                for (d, hv) in dh.iter_mut().zip(&hidden) {
                    *d *= 1.0 - hv * hv;
                }
                affine_backward(obs, &dh, &mut grad[..split]);
            }
        }
        Ok((out, grad))
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<PolicyParams> {
        self.check_params(params.as_slice())?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (rows, cols) in self.layer_shapes() {
            let weights = params.as_slice()[offset..offset + rows * cols].to_vec();
            offset += rows * cols;
            let bias = params.as_slice()[offset..offset + rows].to_vec();
            offset += rows;
            layers.push(DenseLayer { rows, cols, weights, bias });
        }
        Ok(PolicyParams { layers })
    }

    pub fn flatten(&self, structured: &PolicyParams) -> Result<ParamVector> {
        let shapes = self.layer_shapes();
        if structured.layers.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                shapes.len(),
                structured.layers.len()
            )));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (layer, (rows, cols)) in structured.layers.iter().zip(shapes) {
            if layer.rows != rows || layer.cols != cols || layer.weights.len() != rows * cols || layer.bias.len() != rows {
                return Err(Error::invalid(format!("layer shape mismatch: expected {rows}x{cols}")));
            }
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        ParamVector::new(out)
    }
}

/// `out = W x + b` for the `[W row-major | b]` block at the head of `params`.
#[inline]
fn affine(params: &[f64], x: &[f64], rows: usize, out: &mut [f64]) {
    let cols = x.len();
    let (w, rest) = params.split_at(rows * cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + rest[r];
    }
}

fn affine_backward(x: &[f64], delta: &[f64], grad: &mut [f64]) {
    let cols = x.len();
    let rows = delta.len();
    for r in 0..rows {
        for c in 0..cols {
            grad[r * cols + c] += delta[r] * x[c];
        }
        grad[rows * cols + r] += delta[r];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Structured view of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layers: Vec<DenseLayer>,
}

/// Floor for the normalizer's standard deviation.
pub const NORMALIZER_EPS: f64 = 1e-8;

/// Per-dimension running mean/variance (Welford, Chan merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population variance.
    pub fn var(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| m / self.count as f64).collect()
    }

    pub fn observe(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(obs) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    pub fn observe_batch<'a>(&mut self, batch: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        for obs in batch {
            if obs.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    actual: obs.len(),
                });
            }
            self.observe(obs);
        }
        Ok(())
    }

    /// Folds `other`'s statistics into `self`.
    pub fn merge(&mut self, other: &RunningNormalizer) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// `(obs − mean) / max(std, ε)`; identity before any observation.
    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = obs.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub(crate) fn apply_in_place(&self, obs: &mut [f64]) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        for ((x, m), s) in obs.iter_mut().zip(&self.mean).zip(&self.m2) {
            let std = (s / n).sqrt().max(NORMALIZER_EPS);
            *x = (*x - m) / std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn param_counts() {
        assert_eq!(PolicySpec::mlp(2, 2, 32).param_count(), 162);
        assert_eq!(PolicySpec::linear(4, 2).param_count(), 10);
    }

    #[test]
    fn zero_params_give_zero_action() {
        for spec in [PolicySpec::linear(3, 2), PolicySpec::mlp(3, 2, 8)] {
            let p = vec![0.0; spec.param_count()];
            assert_eq!(spec.forward(&p, &[1.0, -5.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn linear_forward_uses_documented_layout() {
        let spec = PolicySpec::linear(2, 2).with_squash(false);
        // W = [[1, 2], [3, 4]], b = [10, 20]
        let p = [1.0, 2.0, 3.0, 4.0, 10.0, 20.0];
        assert_eq!(spec.forward(&p, &[1.0, 1.0]).unwrap(), vec![13.0, 27.0]);
    }

    #[test]
    fn layout_golden() {
        let spec = PolicySpec::mlp(2, 1, 3);
        let flat: Vec<f64> = (0..spec.param_count()).map(|i| i as f64).collect();
        let s = spec.unflatten(&ParamVector::new(flat).unwrap()).unwrap();
        assert_eq!(s.layers[0].weights, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.layers[0].bias, vec![6.0, 7.0, 8.0]);
        assert_eq!(s.layers[1].weights, vec![9.0, 10.0, 11.0]);
        assert_eq!(s.layers[1].bias, vec![12.0]);
    }

    #[test]
    fn flatten_all_ones() {
        let spec = PolicySpec::mlp(2, 2, 32);
        let layers = vec![
            DenseLayer { rows: 32, cols: 2, weights: vec![1.0; 64], bias: vec![1.0; 32] },
            DenseLayer { rows: 2, cols: 32, weights: vec![1.0; 64], bias: vec![1.0; 2] },
        ];
        let flat = spec.flatten(&PolicyParams { layers }).unwrap();
        assert_eq!(flat.dim(), 162);
        assert!(flat.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn wrong_lengths_rejected() {
        let spec = PolicySpec::linear(2, 2);
        assert!(spec.forward(&[0.0; 5], &[0.0, 0.0]).is_err());
        assert!(spec.forward(&[0.0; 6], &[0.0]).is_err());
        assert!(spec.unflatten(&ParamVector::zeros(7)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for spec in [PolicySpec::linear(3, 2), PolicySpec::mlp(3, 2, 5), PolicySpec::mlp(1, 1, 4).with_squash(false)] {
            let p: Vec<f64> = seed::gaussian_vector(42, 0, spec.param_count()).iter().map(|x| 0.5 * x).collect();
            let obs: Vec<f64> = (0..spec.obs_dim).map(|i| 0.3 * i as f64 - 0.2).collect();
            let up: Vec<f64> = (0..spec.act_dim).map(|k| 1.0 + k as f64).collect();
            let (_, g) = spec.backward(&p, &obs, &up).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut a = p.clone();
                let mut b = p.clone();
                a[i] += h;
                b[i] -= h;
                let fa: f64 = spec.forward(&a, &obs).unwrap().iter().zip(&up).map(|(x, u)| x * u).sum();
                let fb: f64 = spec.forward(&b, &obs).unwrap().iter().zip(&up).map(|(x, u)| x * u).sum();
                let fd = (fa - fb) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "{spec:?} param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn normalizer_examples() {
        let mut n = RunningNormalizer::new(1);
        assert_eq!(n.apply(&[4.0]), vec![4.0]);
        n.observe(&[1.0]);
        n.observe(&[3.0]);
        assert_eq!(n.mean, vec![2.0]);
        assert_eq!(n.var(), vec![1.0]);
        assert_eq!(n.apply(&[4.0]), vec![2.0]);
    }

    #[test]
    fn initial_params_zero_output_layer() {
        let spec = PolicySpec::mlp(2, 2, 4);
        let p = spec.initial_params(3);
        let s = spec.unflatten(&p).unwrap();
        assert!(s.layers[1].weights.iter().all(|&x| x == 0.0));
        assert!(s.layers[0].weights.iter().any(|&x| x != 0.0));
        assert_eq!(p, spec.initial_params(3));
        assert!(PolicySpec::linear(2, 2).initial_params(3).as_slice().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(values in prop::collection::vec(-10f64..10.0, 162)) {
            let spec = PolicySpec::mlp(2, 2, 32);
            let p = ParamVector::new(values).unwrap();
            let back = spec.flatten(&spec.unflatten(&p).unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn squashed_actions_bounded_and_finite(
            values in prop::collection::vec(-1e3f64..1e3, 10),
            obs in prop::collection::vec(-1e3f64..1e3, 4),
        ) {
            let spec = PolicySpec::linear(4, 2);
            let a = spec.forward(&values, &obs).unwrap();
            for x in a {
                prop_assert!(x.is_finite());
                prop_assert!(x.abs() <= spec.action_bound);
            }
            let mlp = PolicySpec::mlp(4, 2, 3);
            let p: Vec<f64> = (0..mlp.param_count()).map(|i| values[i % 10]).collect();
            prop_assert!(mlp.forward(&p, &obs).unwrap().iter().all(|x| x.is_finite()));
        }

        #[test]
        fn merge_matches_sequential(
            a in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 0..20),
            b in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 0..20),
            c in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 0..20),
        ) {
            let stats = |rows: &[Vec<f64>]| {
                let mut n = RunningNormalizer::new(3);
                n.observe_batch(rows.iter().map(|r| r.as_slice())).unwrap();
                n
            };
            let mut all = a.clone();
            all.extend(b.clone());
            all.extend(c.clone());
            let whole = stats(&all);
            let mut left = stats(&a);
            left.merge(&stats(&b)).unwrap();
            left.merge(&stats(&c)).unwrap();
            let mut bc = stats(&b);
            bc.merge(&stats(&c)).unwrap();
            let mut right = stats(&a);
            right.merge(&bc).unwrap();
            for n in [&left, &right] {
                prop_assert_eq!(n.count, whole.count);
                for i in 0..3 {
                    prop_assert!((n.mean[i] - whole.mean[i]).abs() < 1e-10);
                    prop_assert!((n.m2[i] - whole.m2[i]).abs() < 1e-10 * (1.0 + whole.m2[i]));
                }
            }
        }
    }
}
