//! Zeroth-order estimators of the Gaussian smoothing
//! `f_σ(θ) = E_g f(θ + σg)`, `g ~ N(0, I)`.
//!
//! * [`es_grad`]: Monte Carlo gradient, with vanilla, forward finite-difference
//!   and antithetic variants.
//! * [`es_hess`]: Monte Carlo Hessian `(E[f(θ+σh) hhᵀ] − f_σ(θ) I) / σ²`.
//! * [`rbo_grad`]: gradient recovered by regularized regression on
//!   finite differences.
//!
//! Directions come from [`sample_perturbations`], which is a pure function of
//! `(seed, n, d, mode)`. Point evaluations may run on the executor's workers;
//! every sum is reduced in direction-index order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blackbox::{normalize_rewards, Evaluator, ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    IidGaussian,
    AntitheticPairs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Vanilla,
    #[default]
    ForwardFd,
    Antithetic,
    Rbo,
}

impl EstimatorKind {
    /// Evaluations charged for `samples` perturbations.
    pub fn cost(self, samples: usize) -> usize {
        match self {
            EstimatorKind::Vanilla | EstimatorKind::Antithetic => samples,
            EstimatorKind::ForwardFd | EstimatorKind::Rbo => samples + 1,
        }
    }

    /// Largest admissible perturbation count whose cost fits in `budget`.
    pub fn samples_for_budget(self, budget: usize) -> usize {
        match self {
            EstimatorKind::Vanilla => budget,
            EstimatorKind::Antithetic => budget - budget % 2,
            EstimatorKind::ForwardFd | EstimatorKind::Rbo => budget.saturating_sub(1),
        }
    }

    fn min_samples(self) -> usize {
        match self {
            EstimatorKind::Antithetic => 2,
            _ => 1,
        }
    }
}

/// A set of search directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBatch {
    pub directions: Vec<Vec<f64>>,
    pub mode: PerturbationMode,
    pub seed: u64,
}

impl PerturbationBatch {
    /// Wraps explicit directions (used to pin directions in tests and oracles).
    pub fn from_directions(directions: Vec<Vec<f64>>, mode: PerturbationMode) -> Result<Self> {
        let batch = Self {
            directions,
            mode,
            seed: 0,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.directions.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.directions.is_empty() {
            return Err(Error::invalid("perturbation batch is empty"));
        }
        let d = self.dim();
        if self.directions.iter().any(|g| g.len() != d) {
            return Err(Error::invalid("perturbation directions differ in length"));
        }
        if self.mode == PerturbationMode::AntitheticPairs {
            if !self.len().is_multiple_of(2) {
                return Err(Error::invalid("antithetic batch needs an even count"));
            }
            for pair in self.directions.chunks(2) {
                if pair[0].iter().zip(&pair[1]).any(|(a, b)| *b != -*a) {
                    return Err(Error::invalid("antithetic pair is not mirrored"));
                }
            }
        }
        Ok(())
    }
}

/// Draws `n` standard-normal directions of dimension `d`.
///
/// In antithetic mode direction `2k+1` is the negation of direction `2k`, and
/// `n` must be even.
pub fn sample_perturbations(n: usize, d: usize, mode: PerturbationMode, seed: u64) -> Result<PerturbationBatch> {
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    let key = seed::derive(seed, tag::PERTURBATION, 0);
    let directions = match mode {
        PerturbationMode::IidGaussian => (0..n as u64).map(|i| seed::gaussian_vector(key, i, d)).collect(),
        PerturbationMode::AntitheticPairs => {
            if !n.is_multiple_of(2) {
                return Err(Error::invalid(format!("antithetic sampling needs even n, got {n}")));
            }
            let mut dirs = Vec::with_capacity(n);
            for k in 0..(n / 2) as u64 {
                let g = seed::gaussian_vector(key, k, d);
                let neg = g.iter().map(|x| -x).collect();
                dirs.push(g);
                dirs.push(neg);
            }
            dirs
        }
    };
    Ok(PerturbationBatch { directions, mode, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub vector: ParamVector,
    pub n_used: usize,
    pub kind: EstimatorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessEstimate {
    pub matrix: DMatrix<f64>,
    pub n_used: usize,
}

impl HessEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(())
}

fn check_dims(f: &dyn TaskObjective, theta: &ParamVector, batch: &PerturbationBatch) -> Result<()> {
    if theta.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: theta.dim(),
        });
    }
    if batch.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: batch.dim(),
        });
    }
    Ok(())
}

fn perturbed_points(theta: &ParamVector, sigma: f64, batch: &PerturbationBatch) -> Result<Vec<ParamVector>> {
    batch.directions.iter().map(|g| theta.add_scaled(sigma, g)).collect()
}

/// `Σ_i w_i g_i`, accumulated in index order.
pub(crate) fn weighted_direction_sum(weights: &[f64], directions: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for (w, g) in weights.iter().zip(directions) {
        for (a, x) in acc.iter_mut().zip(g) {
            *a += w * x;
        }
    }
    acc
}

/// Scale factor `1 / (n σ)` shared by every Monte Carlo gradient in the crate.
#[inline]
pub(crate) fn mc_coefficient(n: usize, sigma: f64) -> f64 {
    1.0 / (n as f64 * sigma)
}

/// Settings for one ES gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsGradient {
    pub samples: usize,
    pub sigma: f64,
    pub kind: EstimatorKind,
    /// Normalize the per-direction rewards before weighting.
    pub normalize: bool,
}

impl EsGradient {
    pub fn new(samples: usize, sigma: f64, kind: EstimatorKind) -> Self {
        Self {
            samples,
            sigma,
            kind,
            normalize: false,
        }
    }

    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    fn mode(&self) -> PerturbationMode {
        match self.kind {
            EstimatorKind::Antithetic => PerturbationMode::AntitheticPairs,
            _ => PerturbationMode::IidGaussian,
        }
    }

    pub fn estimate(&self, f: &dyn TaskObjective, theta: &ParamVector, seed: u64, ev: Evaluator<'_>) -> Result<GradEstimate> {
        if self.kind == EstimatorKind::Rbo {
            return rbo_grad(f, theta, self.samples, self.sigma, RBO_DEFAULT_LAMBDA, RboPenalty::Ridge, seed, ev);
        }
        if self.samples < self.kind.min_samples() {
            return Err(Error::invalid(format!(
                "{:?} estimator needs at least {} perturbations, got {}",
                self.kind,
                self.kind.min_samples(),
                self.samples
            )));
        }
        check_sigma(self.sigma)?;
        let batch = sample_perturbations(self.samples, theta.dim(), self.mode(), seed)?;
        self.estimate_with(f, theta, &batch, ev)
    }

    /// Estimate along explicit directions.
    pub fn estimate_with(
        &self,
        f: &dyn TaskObjective,
        theta: &ParamVector,
        batch: &PerturbationBatch,
        ev: Evaluator<'_>,
    ) -> Result<GradEstimate> {
        check_sigma(self.sigma)?;
        batch.validate()?;
        check_dims(f, theta, batch)?;
        let n = batch.len();
        let d = theta.dim();
        let points = perturbed_points(theta, self.sigma, batch)?;

        let (weights, dirs): (Vec<f64>, Vec<Vec<f64>>) = match self.kind {
            EstimatorKind::Vanilla => {
                let mut v = ev.evaluate_batch(f, &points)?;
                if self.normalize {
                    v = normalize_rewards(&v)?;
                }
                (v, batch.directions.clone())
            }
            EstimatorKind::ForwardFd => {
                let center = ev.evaluate(f, theta)?;
                let v = ev.evaluate_batch(f, &points)?;
                let mut diffs: Vec<f64> = v.iter().map(|x| x - center).collect();
                if self.normalize {
                    diffs = normalize_rewards(&diffs)?;
                }
                (diffs, batch.directions.clone())
            }
            EstimatorKind::Antithetic => {
                if batch.mode != PerturbationMode::AntitheticPairs {
                    return Err(Error::invalid("antithetic estimator needs an antithetic batch"));
                }
                let mut v = ev.evaluate_batch(f, &points)?;
                if self.normalize {
                    v = normalize_rewards(&v)?;
                }
                // One term per pair: (f(θ+σg) − f(θ−σg)) g.
                let diffs: Vec<f64> = v.chunks(2).map(|p| p[0] - p[1]).collect();
                let dirs: Vec<Vec<f64>> = batch.directions.iter().step_by(2).cloned().collect();
                (diffs, dirs)
            }
            EstimatorKind::Rbo => {
                return Err(Error::invalid("use rbo_grad for regression-based estimates"));
            }
        };

        let sum = weighted_direction_sum(&weights, &dirs, d);
        let coef = mc_coefficient(n, self.sigma);
        let grad: Vec<f64> = sum.iter().map(|s| s * coef).collect();
        Ok(GradEstimate {
            vector: ParamVector::new(grad)?,
            n_used: n,
            kind: self.kind,
        })
    }
}

/// Monte Carlo ES gradient of `f_σ` at `theta` from `n` evaluations
/// (`n + 1` for forward differences).
pub fn es_grad(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    n: usize,
    sigma: f64,
    kind: EstimatorKind,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<GradEstimate> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if kind == EstimatorKind::Antithetic && !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("antithetic estimator needs even n, got {n}")));
    }
    check_sigma(sigma)?;
    EsGradient::new(n, sigma, kind).estimate(f, theta, seed, ev)
}

/// Monte Carlo Hessian of `f_σ` at `theta`.
pub fn es_hess(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    n: usize,
    sigma: f64,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<HessEstimate> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_sigma(sigma)?;
    let batch = sample_perturbations(n, theta.dim(), PerturbationMode::IidGaussian, seed)?;
    es_hess_with(f, theta, sigma, &batch, ev)
}

/// [`es_hess`] along explicit directions.
pub fn es_hess_with(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    sigma: f64,
    batch: &PerturbationBatch,
    ev: Evaluator<'_>,
) -> Result<HessEstimate> {
    check_sigma(sigma)?;
    batch.validate()?;
    check_dims(f, theta, batch)?;
    let n = batch.len();
    let d = theta.dim();
    let points = perturbed_points(theta, sigma, batch)?;
    let values = ev.evaluate_batch(f, &points)?;

    let mut mean_value = 0.0;
    let mut second = DMatrix::<f64>::zeros(d, d);
    for (v, g) in values.iter().zip(&batch.directions) {
        mean_value += v;
        for r in 0..d {
            let vr = v * g[r];
            for c in r..d {
                second[(r, c)] += vr * g[c];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    mean_value *= inv_n;
    for r in 0..d {
        for c in 0..r {
            second[(r, c)] = second[(c, r)];
        }
    }
    second *= inv_n;
    for i in 0..d {
        second[(i, i)] -= mean_value;
    }
    second /= sigma * sigma;
    let symmetric = (&second + second.transpose()) * 0.5;
    if symmetric.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Hessian estimate".into()));
    }
    Ok(HessEstimate {
        matrix: symmetric,
        n_used: n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RboPenalty {
    /// Squared loss with `λ‖w‖²`; closed form.
    #[default]
    Ridge,
    /// Robust mode: absolute loss with `λ‖w‖₁`, for corrupted measurements.
    L1,
}

pub const RBO_DEFAULT_LAMBDA: f64 = 0.01;

const L1_TOLERANCE: f64 = 1e-8;
const L1_MAX_ITERS: usize = 500;

/// Regression-based gradient: `d_j = σ g_j`, `y_j = f(θ + d_j) − f(θ)`, and the
/// gradient is the regularized fit of `y ≈ D w`.
#[allow(clippy::too_many_arguments)]
pub fn rbo_grad(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    n: usize,
    sigma: f64,
    lambda: f64,
    penalty: RboPenalty,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<GradEstimate> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_sigma(sigma)?;
    let batch = sample_perturbations(n, theta.dim(), PerturbationMode::IidGaussian, seed)?;
    rbo_grad_with(f, theta, sigma, lambda, penalty, &batch, ev)
}

/// [`rbo_grad`] along explicit directions.
pub fn rbo_grad_with(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    sigma: f64,
    lambda: f64,
    penalty: RboPenalty,
    batch: &PerturbationBatch,
    ev: Evaluator<'_>,
) -> Result<GradEstimate> {
    check_sigma(sigma)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    batch.validate()?;
    check_dims(f, theta, batch)?;
    let center = ev.evaluate(f, theta)?;
    let points = perturbed_points(theta, sigma, batch)?;
    let values = ev.evaluate_batch(f, &points)?;
    let y: Vec<f64> = values.iter().map(|v| v - center).collect();
    let design = DMatrix::from_fn(batch.len(), theta.dim(), |r, c| sigma * batch.directions[r][c]);
    let w = solve_regression(&design, &DVector::from_vec(y), lambda, penalty)?;
    Ok(GradEstimate {
        vector: ParamVector::new(w.iter().copied().collect())?,
        n_used: batch.len(),
        kind: EstimatorKind::Rbo,
    })
}

/// `argmin_w loss(y − D w) + λ penalty(w)`.
pub fn solve_regression(design: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, penalty: RboPenalty) -> Result<DVector<f64>> {
    if design.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: design.nrows(),
            actual: y.len(),
        });
    }
    match penalty {
        RboPenalty::Ridge => ridge(design, y, lambda),
        RboPenalty::L1 => least_absolute(design, y, lambda),
    }
}

fn ridge(design: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = design.ncols();
    let gram = design.transpose() * design + DMatrix::identity(d, d) * lambda;
    let rhs = design.transpose() * y;
    weighted_solve(gram, rhs, lambda)
}

fn weighted_solve(gram: DMatrix<f64>, rhs: DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let scale = gram.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let singular = || {
        if lambda == 0.0 {
            Error::Singular("normal equations are singular with lambda = 0; use lambda > 0".into())
        } else {
            Error::Singular("normal equations are not positive definite".into())
        }
    };
    let chol = gram.cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if scale == 0.0 || min_pivot * min_pivot <= scale * 1e-13 {
        return Err(singular());
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|x| !x.is_finite()) {
        return Err(singular());
    }
    Ok(w)
}

/// `Σ_j |y_j − d_jᵀ w| + λ ‖w‖₁` by iteratively reweighted least squares,
/// started from the least-squares fit.
fn least_absolute(design: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let d = design.ncols();
    let y_scale = y.amax().max(1.0);
    let floor = 1e-12 * y_scale;
    let mut w = ridge(design, y, lambda.max(1e-10 * y_scale))?;
    for _ in 0..L1_MAX_ITERS {
        let resid = y - design * &w;
        let row_w: Vec<f64> = resid.iter().map(|r| 1.0 / r.abs().max(floor)).collect();
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for (j, rw) in row_w.iter().enumerate() {
            let row = design.row(j);
            gram += row.transpose() * row * *rw;
            rhs += row.transpose() * (y[j] * rw);
        }
        for k in 0..d {
            gram[(k, k)] += lambda / w[k].abs().max(floor);
        }
        let next = weighted_solve(gram, rhs, lambda)?;
        let change = (&next - &w).amax();
        w = next;
        if change <= L1_TOLERANCE * (1.0 + w.amax()) {
            break;
        }
    }
    Ok(w)
}
