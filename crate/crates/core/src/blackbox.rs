//! Parameter vectors, blackbox task objectives, query accounting and reward
//! normalization.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;

/// Flat policy/parameter point. Every entry is finite.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have dim >= 1"));
        }
        check_finite(&values, "parameter vector")?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vector must have dim >= 1");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self + scale * direction`.
    pub fn add_scaled(&self, scale: f64, direction: &[f64]) -> Result<Self> {
        if direction.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: direction.len(),
            });
        }
        let out: Vec<f64> = self
            .0
            .iter()
            .zip(direction)
            .map(|(x, d)| x + scale * d)
            .collect();
        check_finite(&out, "parameter update")?;
        Ok(Self(out))
    }

    pub fn scaled(&self, scale: f64) -> Result<Self> {
        let out: Vec<f64> = self.0.iter().map(|x| x * scale).collect();
        check_finite(&out, "parameter scaling")?;
        Ok(Self(out))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// A blackbox objective `f^T` for one task.
///
/// `value` must be a pure function of the parameters and the task (including
/// any episode seed the task was built with). Optimizers only ever see the
/// returned scalar.
pub trait TaskObjective: Send + Sync {
    fn dim(&self) -> usize;

    fn task_id(&self) -> &str;

    /// Rollouts consumed by one evaluation.
    fn query_cost(&self) -> u64 {
        1
    }

    fn value(&self, theta: &ParamVector) -> Result<f64>;

    /// Value plus observation statistics gathered while computing it. Tasks
    /// without a state space return `None`.
    fn value_with_observations(
        &self,
        theta: &ParamVector,
    ) -> Result<(f64, Option<RunningNormalizer>)> {
        Ok((self.value(theta)?, None))
    }

    /// Exact ascent direction `∇ value` where the task can provide one.
    fn exact_gradient(&self, _theta: &ParamVector) -> Result<ParamVector> {
        Err(Error::NoExactGradient(self.task_id().to_string()))
    }

    fn has_exact_gradient(&self) -> bool {
        false
    }
}

/// Running totals of task evaluations and rollouts.
///
/// Counters only grow. Totals are order-independent, so the ledger can be
/// shared by concurrent branches.
#[derive(Debug, Default)]
pub struct QueryLedger {
    evaluations: AtomicU64,
    rollouts: AtomicU64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_totals(evaluations: u64, rollouts: u64) -> Self {
        Self {
            evaluations: AtomicU64::new(evaluations),
            rollouts: AtomicU64::new(rollouts),
        }
    }

    pub fn record(&self, evaluations: u64, rollouts: u64) {
        self.evaluations.fetch_add(evaluations, Ordering::Relaxed);
        self.rollouts.fetch_add(rollouts, Ordering::Relaxed);
    }

    pub fn total_evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn total_rollouts(&self) -> u64 {
        self.rollouts.load(Ordering::Relaxed)
    }
}

fn check_dim(obj: &dyn TaskObjective, theta: &ParamVector) -> Result<()> {
    if theta.dim() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            actual: theta.dim(),
        });
    }
    Ok(())
}

/// Evaluates `obj` at `theta` and charges the ledger.
pub fn evaluate(obj: &dyn TaskObjective, theta: &ParamVector, ledger: &QueryLedger) -> Result<f64> {
    check_dim(obj, theta)?;
    let v = obj.value(theta);
    ledger.record(1, obj.query_cost());
    let v = v?;
    if !v.is_finite() {
        return Err(Error::NonFiniteEvaluation { index: 0 });
    }
    Ok(v)
}

/// Ledger plus executor: everything an estimator needs to query a task.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    ledger: &'a QueryLedger,
    exec: &'a Executor,
}

impl<'a> Evaluator<'a> {
    pub fn new(ledger: &'a QueryLedger, exec: &'a Executor) -> Self {
        Self { ledger, exec }
    }

    pub fn sequential(ledger: &'a QueryLedger) -> Self {
        Self {
            ledger,
            exec: Executor::sequential_ref(),
        }
    }

    pub fn ledger(&self) -> &'a QueryLedger {
        self.ledger
    }

    pub fn executor(&self) -> &'a Executor {
        self.exec
    }

    pub fn evaluate(&self, obj: &dyn TaskObjective, theta: &ParamVector) -> Result<f64> {
        evaluate(obj, theta, self.ledger)
    }

    pub fn evaluate_observed(
        &self,
        obj: &dyn TaskObjective,
        theta: &ParamVector,
    ) -> Result<(f64, Option<RunningNormalizer>)> {
        check_dim(obj, theta)?;
        let out = obj.value_with_observations(theta);
        self.ledger.record(1, obj.query_cost());
        let (v, obs) = out?;
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: 0 });
        }
        Ok((v, obs))
    }

    /// Evaluates every point, in parallel when the executor allows it.
    /// Non-finite values are reported with the offending point index.
    pub fn evaluate_batch(&self, obj: &dyn TaskObjective, points: &[ParamVector]) -> Result<Vec<f64>> {
        for p in points {
            check_dim(obj, p)?;
        }
        let values = self.exec.map(points, |_, p| obj.value(p));
        let n = points.len() as u64;
        self.ledger.record(n, n * obj.query_cost());
        let values = values.map_err(|e| match e {
            Error::ParallelItems { index, source, .. } => Error::Branch { index, source },
            other => other,
        })?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { index });
        }
        Ok(values)
    }
}

/// Degenerate-spread threshold for [`normalize_rewards`].
pub const REWARD_STD_EPS: f64 = 1e-8;

/// Rewards from one perturbation batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBatch(pub Vec<f64>);

impl RewardBatch {
    pub fn normalized(&self) -> Result<RewardBatch> {
        normalize_rewards(&self.0).map(RewardBatch)
    }
}

/// `(r - mean) / std` with the population standard deviation. A batch whose
/// spread is below [`REWARD_STD_EPS`] maps to all zeros.
pub fn normalize_rewards(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < REWARD_STD_EPS {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}
