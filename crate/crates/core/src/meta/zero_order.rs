use std::sync::Arc;

use super::{branch_error, Baseline, MetaConfig};
use crate::adaptation::{adapt, AdaptationConfig};
use crate::blackbox::{normalize_rewards, Evaluator, ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::estimators::{mc_coefficient, sample_perturbations, weighted_direction_sum, PerturbationMode};
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};
use crate::tasks::{TaskDistribution, TaskStream};

/// Result of one outer-loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub theta: ParamVector,
    /// Raw observation statistics from the evaluated rollouts, merged in
    /// branch order.
    pub observations: Option<RunningNormalizer>,
    /// Per-branch objective values before baselining.
    pub values: Vec<f64>,
}

/// One zero-order ES-MAML iteration.
///
/// Branch `i` pairs direction `g_i` with task `⌊i / m⌋` and computes
/// `v_i = f(U(θ + σ g_i))`. The update is `θ + β/(nσ) Σ ṽ_i g_i` with `ṽ` the
/// baselined, optionally normalized values.
pub fn zo_esmaml_step(
    theta: &ParamVector,
    family: &dyn TaskDistribution,
    cfg: &MetaConfig,
    adapt_cfg: &AdaptationConfig,
    seed: u64,
    normalizer: Option<&Arc<RunningNormalizer>>,
    ev: Evaluator<'_>,
) -> Result<StepOutput> {
    cfg.validate()?;
    let tasks = family.sample_tasks(TaskStream::Train, cfg.tasks_per_iteration(), seed, normalizer)?;
    let batch = sample_perturbations(cfg.n, theta.dim(), PerturbationMode::IidGaussian, seed::derive(seed, tag::OUTER, 0))?;
    zo_esmaml_step_with(theta, &tasks, &batch.directions, cfg, adapt_cfg, seed, ev)
}

/// [`zo_esmaml_step`] with explicit tasks and directions.
pub fn zo_esmaml_step_with(
    theta: &ParamVector,
    tasks: &[Arc<dyn TaskObjective>],
    directions: &[Vec<f64>],
    cfg: &MetaConfig,
    adapt_cfg: &AdaptationConfig,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<StepOutput> {
    cfg.validate()?;
    adapt_cfg.validate()?;
    let n = directions.len();
    let m = cfg.perturbations_per_task;
    if n == 0 {
        return Err(Error::invalid("zero-order step needs at least one direction"));
    }
    if tasks.len() * m < n {
        return Err(Error::invalid(format!(
            "{} directions need {} tasks at {m} per task, got {}",
            n,
            n.div_ceil(m),
            tasks.len()
        )));
    }
    if let Some(g) = directions.iter().find(|g| g.len() != theta.dim()) {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: g.len(),
        });
    }

    let inner = Evaluator::new(ev.ledger(), Executor::sequential_ref());
    let branches = ev
        .executor()
        .map(directions, |i, g| {
            let task = tasks[i / m].as_ref();
            let start = theta.add_scaled(cfg.sigma, g)?;
            let r = adapt(task, &start, adapt_cfg, seed::derive(seed, tag::ADAPT, i as u64), inner)?;
            inner.evaluate_observed(task, &r.adapted)
        })
        .map_err(branch_error)?;

    let mut values = Vec::with_capacity(n);
    let mut observations: Option<RunningNormalizer> = None;
    for (v, obs) in branches {
        values.push(v);
        if let Some(o) = obs {
            match observations.as_mut() {
                Some(acc) => acc.merge(&o)?,
                None => observations = Some(o),
            }
        }
    }

    let mut weights = match cfg.baseline {
        Baseline::None => values.clone(),
        Baseline::BatchMean => {
            let mean = values.iter().sum::<f64>() / n as f64;
            values.iter().map(|v| v - mean).collect()
        }
        Baseline::PerTaskUnperturbed => {
            let used = &tasks[..n.div_ceil(m)];
            let base = ev
                .executor()
                .map(used, |j, task| {
                    let r = adapt(task.as_ref(), theta, adapt_cfg, seed::derive(seed, tag::BASELINE, j as u64), inner)?;
                    inner.evaluate(task.as_ref(), &r.adapted)
                })
                .map_err(branch_error)?;
            values.iter().enumerate().map(|(i, v)| v - base[i / m]).collect()
        }
    };
    if cfg.normalize_rewards {
        weights = normalize_rewards(&weights)?;
    }

    let sum = weighted_direction_sum(&weights, directions, theta.dim());
    let coef = mc_coefficient(n, cfg.sigma);
    let grad: Vec<f64> = sum.iter().map(|s| s * coef).collect();
    Ok(StepOutput {
        theta: theta.add_scaled(cfg.beta, &grad)?,
        observations,
        values,
    })
}
