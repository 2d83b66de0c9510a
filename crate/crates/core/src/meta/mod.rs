//! Outer-loop meta-training.
//!
//! [`zo_esmaml_step`] smooths the whole MAML objective `f^T(U(θ, T))` and needs
//! nothing but task values. [`fo_esmaml_step`] follows the first-order
//! expansion `(I + α∇²f̃)∇f̃(θ + α∇f̃)` with Monte Carlo gradient and Hessian
//! estimates. [`train`] iterates either one and reports the held-out score of
//! [`eval_maml_score`] every `eval_every` iterations.

mod eval;
mod first_order;
mod train;
mod zero_order;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{eval_maml_score, EvalRecord, EvalSummary};
pub use first_order::{fo_esmaml_step, fo_esmaml_step_with, FoDirections};
pub use train::{train, TrainOutcome, TrainState};
pub use zero_order::{zo_esmaml_step, zo_esmaml_step_with, StepOutput};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    #[default]
    BatchMean,
    /// `f^{T}(U(θ, T))` per sampled task; costs one extra adaptation and
    /// evaluation per task.
    PerTaskUnperturbed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    ZeroOrder,
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub algorithm: Algorithm,
    /// Perturbations per iteration (tasks per iteration for first order).
    pub n: usize,
    pub beta: f64,
    pub sigma: f64,
    pub baseline: Baseline,
    pub iterations: usize,
    pub eval_every: usize,
    pub test_task_count: usize,
    pub normalize_rewards: bool,
    /// Perturbations sharing one sampled task.
    pub perturbations_per_task: usize,
    /// First order only: include the Hessian term.
    pub use_hessian: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ZeroOrder,
            n: 20,
            beta: 0.01,
            sigma: 0.1,
            baseline: Baseline::BatchMean,
            iterations: 100,
            eval_every: 10,
            test_task_count: 8,
            normalize_rewards: true,
            perturbations_per_task: 1,
            use_hessian: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("meta n must be >= 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("meta beta must be > 0, got {}", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("meta sigma must be > 0, got {}", self.sigma)));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("meta eval_every must be >= 1"));
        }
        if self.test_task_count == 0 {
            return Err(Error::invalid("meta test_task_count must be >= 1"));
        }
        if self.perturbations_per_task == 0 {
            return Err(Error::invalid("meta perturbations_per_task must be >= 1"));
        }
        Ok(())
    }

    /// Tasks sampled per zero-order iteration.
    pub fn tasks_per_iteration(&self) -> usize {
        self.n.div_ceil(self.perturbations_per_task)
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaIterationReport {
    /// Number of completed iterations.
    pub iteration: usize,
    pub meta_score_mean: f64,
    pub meta_score_std: f64,
    pub unadapted_mean: f64,
    /// `meta_score_mean − unadapted_mean`.
    pub adaptation_gap: f64,
    pub rollouts_cumulative: u64,
    pub wallclock_s: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Maps a parallel-map failure onto the branch that caused it.
pub(crate) fn branch_error(e: Error) -> Error {
    match e {
        Error::ParallelItems { index, source, .. } => Error::Branch { index, source },
        other => other,
    }
}
