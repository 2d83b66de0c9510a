//! Closed-form objectives whose Gaussian smoothings are known exactly.
//!
//! For `f(θ) = θᵀQθ + bᵀθ + c` with symmetric `Q`,
//! `f̃_σ(θ) = f(θ) + σ²·tr(Q)`, `∇f̃_σ = 2Qθ + b` and `∇²f̃_σ = 2Q`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{finite_batch, stream_key, TaskDistribution, TaskStream};
use crate::blackbox::{ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::policies::RunningNormalizer;
use crate::seed;

/// Wraps a closure as a task objective.
pub struct FnObjective<F> {
    id: String,
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(id: impl Into<String>, dim: usize, f: F) -> Self {
        Self { id: id.into(), dim, f }
    }
}

impl<F> fmt::Debug for FnObjective<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObjective").field("id", &self.id).field("dim", &self.dim).finish()
    }
}

impl<F> TaskObjective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn task_id(&self) -> &str {
        &self.id
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(self.dim, theta)?;
        Ok((self.f)(theta.as_slice()))
    }
}

fn check_dim(dim: usize, theta: &ParamVector) -> Result<()> {
    if theta.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: theta.dim(),
        });
    }
    Ok(())
}

/// `θᵀQθ + bᵀθ + c`, optionally plus deterministic pseudo-noise.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticObjective {
    pub name: String,
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    /// Standard deviation of the additive noise term.
    pub noise: f64,
    pub episode_seed: u64,
}

impl AnalyticObjective {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::quadratic("constant", DMatrix::zeros(dim, dim), DVector::zeros(dim), c)
    }

    pub fn affine(a: &[f64], c: f64) -> Self {
        let d = a.len();
        Self::quadratic("affine", DMatrix::zeros(d, d), DVector::from_column_slice(a), c)
    }

    /// `−scale·‖θ − center‖²`, maximized at `center`.
    pub fn bowl(center: &[f64], scale: f64) -> Self {
        let d = center.len();
        let x = DVector::from_column_slice(center);
        let q = DMatrix::identity(d, d) * -scale;
        let b = &x * (2.0 * scale);
        let c = -scale * x.norm_squared();
        Self::quadratic("bowl", q, b, c)
    }

    pub fn quadratic(name: &str, q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Self {
        assert_eq!(q.nrows(), b.len(), "Q and b disagree on dimension");
        let q = (&q + q.transpose()) * 0.5;
        Self {
            name: name.to_string(),
            q,
            b,
            c,
            noise: 0.0,
            episode_seed: 0,
        }
    }

    /// Adds noise of standard deviation `noise`, a pure function of
    /// `(θ, episode_seed)`.
    pub fn with_noise(mut self, noise: f64, episode_seed: u64) -> Self {
        self.noise = noise;
        self.episode_seed = episode_seed;
        self.name = format!("noisy_{}", self.name);
        self
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn exact(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        t.dot(&(&self.q * &t)) + self.b.dot(&t) + self.c
    }

    pub fn smoothed_value(&self, theta: &[f64], sigma: f64) -> f64 {
        self.exact(theta) + sigma * sigma * self.q.trace()
    }

    pub fn smoothed_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.q * t * 2.0 + &self.b).as_slice().to_vec()
    }

    pub fn smoothed_hessian(&self) -> DMatrix<f64> {
        &self.q * 2.0
    }

    fn noise_at(&self, theta: &[f64]) -> f64 {
        let mut h = self.episode_seed;
        for v in theta {
            h = seed::derive(h, v.to_bits(), 0);
        }
        self.noise * seed::gaussian_vector(h, 0, 1)[0]
    }
}

impl TaskObjective for AnalyticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn task_id(&self) -> &str {
        &self.name
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        let mut v = self.exact(theta.as_slice());
        if self.noise > 0.0 {
            v += self.noise_at(theta.as_slice());
        }
        Ok(v)
    }

    fn exact_gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), theta)?;
        if self.noise > 0.0 {
            return Err(Error::NoExactGradient(self.name.clone()));
        }
        ParamVector::new(self.smoothed_gradient(theta.as_slice()))
    }

    fn has_exact_gradient(&self) -> bool {
        self.noise == 0.0
    }
}

/// The standard catalog in dimension `dim`: constant, affine, bowl and noisy
/// bowl.
pub fn analytic_objectives(dim: usize) -> Vec<AnalyticObjective> {
    let a: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 * 0.5).collect();
    let center: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    vec![
        AnalyticObjective::constant(dim, 5.0),
        AnalyticObjective::affine(&a, 1.0),
        AnalyticObjective::bowl(&center, 1.0),
        AnalyticObjective::bowl(&center, 1.0).with_noise(0.1, 0),
    ]
}

/// A finite task family over fixed objectives. Both streams draw from the same
/// universe, without replacement within each block of `N` draws.
#[derive(Clone)]
pub struct FixedFamily {
    name: String,
    tasks: Vec<Arc<dyn TaskObjective>>,
}

impl FixedFamily {
    pub fn new(name: impl Into<String>, tasks: Vec<Arc<dyn TaskObjective>>) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::invalid("fixed family needs at least one task"))?;
        let dim = first.dim();
        if let Some(bad) = tasks.iter().find(|t| t.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(Self { name: name.into(), tasks })
    }

    pub fn single(task: Arc<dyn TaskObjective>) -> Self {
        Self {
            name: task.task_id().to_string(),
            tasks: vec![task],
        }
    }
}

impl fmt::Debug for FixedFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FixedFamily")
            .field("name", &self.name)
            .field("tasks", &self.tasks.len())
            .finish()
    }
}

impl TaskDistribution for FixedFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn param_dim(&self) -> usize {
        self.tasks[0].dim()
    }

    fn universe_size(&self) -> Option<usize> {
        Some(self.tasks.len())
    }

    fn sample_tasks(
        &self,
        stream: TaskStream,
        count: usize,
        seed: u64,
        _normalizer: Option<&Arc<RunningNormalizer>>,
    ) -> Result<Vec<Arc<dyn TaskObjective>>> {
        let idx: Vec<usize> = (0..self.tasks.len()).collect();
        Ok(finite_batch(&idx, count, stream_key(seed, stream))
            .into_iter()
            .map(|i| Arc::clone(&self.tasks[i]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bowl_peaks_at_center() {
        let f = AnalyticObjective::bowl(&[1.0, -2.0], 1.0);
        assert_eq!(f.exact(&[1.0, -2.0]), 0.0);
        assert_eq!(f.smoothed_gradient(&[1.0, -2.0]), vec![0.0, 0.0]);
        assert!((f.exact(&[0.0, 0.0]) + 5.0).abs() < 1e-12);
        assert!((f.smoothed_value(&[1.0, -2.0], 0.1) + 0.02).abs() < 1e-12);
    }

    #[test]
    fn affine_gradient_is_constant() {
        let f = AnalyticObjective::affine(&[2.0, 3.0], 4.0);
        assert_eq!(f.exact(&[1.0, 1.0]), 9.0);
        assert_eq!(f.smoothed_gradient(&[7.0, -1.0]), vec![2.0, 3.0]);
        assert_eq!(f.smoothed_hessian(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn noise_is_pure() {
        let f = AnalyticObjective::bowl(&[0.0], 1.0).with_noise(0.5, 3);
        let t = ParamVector::new(vec![0.25]).unwrap();
        assert_eq!(f.value(&t).unwrap(), f.value(&t).unwrap());
        assert_ne!(f.value(&t).unwrap(), f.exact(&[0.25]));
        assert!(!f.has_exact_gradient());
    }

    #[test]
    fn catalog_dimensions() {
        for f in analytic_objectives(4) {
            assert_eq!(TaskObjective::dim(&f), 4);
        }
    }

    #[test]
    fn fixed_family_rejects_mixed_dims() {
        let a: Arc<dyn TaskObjective> = Arc::new(AnalyticObjective::constant(2, 1.0));
        let b: Arc<dyn TaskObjective> = Arc::new(AnalyticObjective::constant(3, 1.0));
        assert!(FixedFamily::new("mixed", vec![a, b]).is_err());
    }
}
