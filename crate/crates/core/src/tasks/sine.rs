//! Few-shot sine regression, `f(x) = A·sin(x − φ)`.
//!
//! A task carries two point sets drawn from `[−5, 5]`: the `K` support points
//! the adaptation gradient is computed on, and the query points the task value
//! (negative MSE) is measured on.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use super::{stream_key, TaskDistribution, TaskParams, TaskStream};
use crate::blackbox::{ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::policies::{PolicySpec, RunningNormalizer};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
    pub spec: PolicySpec,
    pub support: Vec<f64>,
    pub query: Vec<f64>,
    id: String,
}

impl SineTask {
    pub fn new(amplitude: f64, phase: f64, spec: PolicySpec, support: Vec<f64>, query: Vec<f64>) -> Result<Self> {
        if spec.obs_dim != 1 || spec.act_dim != 1 {
            return Err(Error::invalid("sine regression needs a 1-in 1-out policy"));
        }
        if support.is_empty() || query.is_empty() {
            return Err(Error::invalid("sine task needs at least one support and one query point"));
        }
        let id = TaskParams::Sine { amplitude, phase }.label();
        Ok(Self {
            amplitude,
            phase,
            spec,
            support,
            query,
            id,
        })
    }

    pub fn target(&self, x: f64) -> f64 {
        self.amplitude * (x - self.phase).sin()
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.dim() != self.spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.param_count(),
                actual: theta.dim(),
            });
        }
        Ok(())
    }

    /// Mean squared error of the network on `points`.
    pub fn loss_on(&self, theta: &ParamVector, points: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let mut hidden = vec![0.0; self.spec.hidden_width];
        let mut out = [0.0];
        let mut total = 0.0;
        for &x in points {
            self.spec.forward_into(theta.as_slice(), &[x], &mut hidden, &mut out);
            total += (out[0] - self.target(x)).powi(2);
        }
        Ok(total / points.len() as f64)
    }

    /// Closed-form `∇L` of the MSE on `points`.
    pub fn loss_gradient_on(&self, theta: &ParamVector, points: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let scale = 2.0 / points.len() as f64;
        let mut grad = vec![0.0; theta.dim()];
        let mut hidden = vec![0.0; self.spec.hidden_width];
        let mut out = [0.0];
        for &x in points {
            self.spec.forward_into(theta.as_slice(), &[x], &mut hidden, &mut out);
            let residual = out[0] - self.target(x);
            let (_, g) = self.spec.backward(theta.as_slice(), &[x], &[scale * residual])?;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(grad)
    }

    pub fn support_loss(&self, theta: &ParamVector) -> Result<f64> {
        self.loss_on(theta, &self.support)
    }

    pub fn query_loss(&self, theta: &ParamVector) -> Result<f64> {
        self.loss_on(theta, &self.query)
    }
}

impl TaskObjective for SineTask {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn task_id(&self) -> &str {
        &self.id
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        Ok(-self.query_loss(theta)?)
    }

    /// `−∇L` on the support points.
    fn exact_gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        let g = self.loss_gradient_on(theta, &self.support)?;
        ParamVector::new(g.into_iter().map(|v| -v).collect())
    }

    fn has_exact_gradient(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineFamily {
    pub spec: PolicySpec,
    pub support_size: usize,
    pub query_size: usize,
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub x_range: (f64, f64),
}

impl SineFamily {
    pub const DEFAULT_QUERY_SIZE: usize = 50;

    pub fn new(spec: PolicySpec, support_size: usize) -> Result<Self> {
        spec.validate()?;
        if spec.obs_dim != 1 || spec.act_dim != 1 {
            return Err(Error::invalid("sine regression needs a 1-in 1-out policy"));
        }
        if support_size == 0 {
            return Err(Error::invalid("sine support size must be >= 1"));
        }
        Ok(Self {
            spec,
            support_size,
            query_size: Self::DEFAULT_QUERY_SIZE,
            amplitude_range: (0.1, 5.0),
            phase_range: (0.0, PI),
            x_range: (-5.0, 5.0),
        })
    }

    pub fn with_query_size(mut self, query_size: usize) -> Result<Self> {
        if query_size == 0 {
            return Err(Error::invalid("sine query size must be >= 1"));
        }
        self.query_size = query_size;
        Ok(self)
    }

    /// Task `index` of the stream keyed by `key`.
    pub fn task(&self, key: u64, index: u64) -> SineTask {
        let mut rng = seed::stream(key, index);
        let amplitude = rng.random_range(self.amplitude_range.0..=self.amplitude_range.1);
        let phase = rng.random_range(self.phase_range.0..=self.phase_range.1);
        let (lo, hi) = self.x_range;
        let support = (0..self.support_size).map(|_| rng.random_range(lo..=hi)).collect();
        let query = (0..self.query_size).map(|_| rng.random_range(lo..=hi)).collect();
        SineTask::new(amplitude, phase, self.spec, support, query).expect("validated family")
    }

    pub fn sample(&self, stream: TaskStream, count: usize, seed: u64) -> Vec<SineTask> {
        let key = stream_key(seed, stream);
        (0..count as u64).map(|i| self.task(key, i)).collect()
    }
}

impl TaskDistribution for SineFamily {
    fn name(&self) -> &str {
        "sine"
    }

    fn param_dim(&self) -> usize {
        self.spec.param_count()
    }

    fn universe_size(&self) -> Option<usize> {
        None
    }

    fn sample_tasks(
        &self,
        stream: TaskStream,
        count: usize,
        seed: u64,
        _normalizer: Option<&Arc<RunningNormalizer>>,
    ) -> Result<Vec<Arc<dyn TaskObjective>>> {
        Ok(self
            .sample(stream, count, seed)
            .into_iter()
            .map(|t| Arc::new(t) as Arc<dyn TaskObjective>)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PolicySpec {
        PolicySpec::mlp(1, 1, 32).with_squash(false)
    }

    #[test]
    fn target_vanishes_at_phase() {
        let t = SineTask::new(3.0, 1.2, spec(), vec![0.0], vec![0.0]).unwrap();
        assert_eq!(t.target(1.2), 0.0);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        // Zero amplitude is matched exactly by the zero network.
        let t = SineTask::new(0.0, 0.5, spec(), vec![-1.0, 2.0, 4.5], vec![0.3]).unwrap();
        let mut theta = spec().initial_params(3).into_vec();
        let n = theta.len();
        theta[n - 33..].iter_mut().for_each(|v| *v = 0.0);
        let theta = ParamVector::new(theta).unwrap();
        assert_eq!(t.support_loss(&theta).unwrap(), 0.0);
        assert!(t.exact_gradient(&theta).unwrap().as_slice().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let fam = SineFamily::new(spec(), 10).unwrap();
        for i in 0..5 {
            let task = fam.task(99, i);
            let theta: Vec<f64> = seed::gaussian_vector(7, i, 97).iter().map(|v| 0.5 * v).collect();
            let theta = ParamVector::new(theta).unwrap();
            let g = task.loss_gradient_on(&theta, &task.support).unwrap();
            let h = 1e-5;
            let mut fd = vec![0.0; 97];
            for k in 0..97 {
                let mut e = vec![0.0; 97];
                e[k] = 1.0;
                let up = task.support_loss(&theta.add_scaled(h, &e).unwrap()).unwrap();
                let dn = task.support_loss(&theta.add_scaled(-h, &e).unwrap()).unwrap();
                fd[k] = (up - dn) / (2.0 * h);
            }
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm < 1e-5, "relative error {}", err / norm);
        }
    }

    #[test]
    fn value_is_negative_query_mse() {
        let t = SineTask::new(2.0, 0.0, spec(), vec![1.0], vec![PI / 2.0]).unwrap();
        let zero = ParamVector::zeros(97);
        assert!((t.value(&zero).unwrap() + 4.0).abs() < 1e-12);
    }

    #[test]
    fn draws_respect_ranges() {
        let fam = SineFamily::new(spec(), 5).unwrap();
        for t in fam.sample(TaskStream::Train, 200, 1) {
            assert!((0.1..=5.0).contains(&t.amplitude));
            assert!((0.0..=PI).contains(&t.phase));
            assert_eq!(t.support.len(), 5);
            assert!(t.support.iter().chain(&t.query).all(|x| x.abs() <= 5.0));
        }
    }
}
