use std::sync::Arc;

use nalgebra::DVector;

use super::{branch_error, MetaConfig, StepOutput};
use crate::adaptation::AdaptationConfig;
use crate::blackbox::{Evaluator, ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::estimators::{es_hess_with, sample_perturbations, EsGradient, PerturbationBatch, PerturbationMode};
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};
use crate::tasks::{TaskDistribution, TaskStream};

/// Directions for one task of a first-order step.
#[derive(Debug, Clone, PartialEq)]
pub struct FoDirections {
    /// For `d₁ = ∇f̃(θ)`.
    pub first: PerturbationBatch,
    /// For `H = ∇²f̃(θ)`; ignored without the Hessian term.
    pub hessian: PerturbationBatch,
    /// For `d₂ = ∇f̃(θ + α d₁)`.
    pub second: PerturbationBatch,
}

impl FoDirections {
    /// The directions [`fo_esmaml_step`] uses for task `index`.
    pub fn sample(k: usize, dim: usize, mode: PerturbationMode, seed: u64, index: u64) -> Result<Self> {
        Ok(Self {
            first: sample_perturbations(k, dim, mode, seed::derive(seed, tag::FIRST_GRAD, index))?,
            hessian: sample_perturbations(k, dim, PerturbationMode::IidGaussian, seed::derive(seed, tag::HESSIAN, index))?,
            second: sample_perturbations(k, dim, mode, seed::derive(seed, tag::SECOND_GRAD, index))?,
        })
    }
}

/// One first-order ES-MAML iteration over `n` fresh tasks:
/// `θ + (β/n) Σ_i (I + α H_i) d₂ᵢ`.
///
/// Every estimate uses `K = adapt_cfg.queries` perturbations at scale
/// `cfg.sigma` with the adaptation estimator kind. `d₁` follows the adaptation
/// reward normalization setting, `d₂` the outer one.
pub fn fo_esmaml_step(
    theta: &ParamVector,
    family: &dyn TaskDistribution,
    cfg: &MetaConfig,
    adapt_cfg: &AdaptationConfig,
    seed: u64,
    normalizer: Option<&Arc<RunningNormalizer>>,
    ev: Evaluator<'_>,
) -> Result<StepOutput> {
    cfg.validate()?;
    let tasks = family.sample_tasks(TaskStream::Train, cfg.n, seed, normalizer)?;
    let mode = if adapt_cfg.estimator == crate::estimators::EstimatorKind::Antithetic {
        PerturbationMode::AntitheticPairs
    } else {
        PerturbationMode::IidGaussian
    };
    let dirs = (0..cfg.n as u64)
        .map(|i| FoDirections::sample(adapt_cfg.queries, theta.dim(), mode, seed, i))
        .collect::<Result<Vec<_>>>()?;
    fo_esmaml_step_with(theta, &tasks, &dirs, cfg, adapt_cfg, normalizer.is_some(), ev)
}

/// [`fo_esmaml_step`] with explicit tasks and directions. With `observe`, the
/// adapted point of every task is rolled out once more to gather observation
/// statistics.
pub fn fo_esmaml_step_with(
    theta: &ParamVector,
    tasks: &[Arc<dyn TaskObjective>],
    dirs: &[FoDirections],
    cfg: &MetaConfig,
    adapt_cfg: &AdaptationConfig,
    observe: bool,
    ev: Evaluator<'_>,
) -> Result<StepOutput> {
    cfg.validate()?;
    if tasks.is_empty() || tasks.len() != dirs.len() {
        return Err(Error::invalid(format!(
            "first-order step needs one direction set per task, got {} tasks and {} sets",
            tasks.len(),
            dirs.len()
        )));
    }
    let alpha = adapt_cfg.alpha;
    let kind = adapt_cfg.estimator;
    let first = EsGradient::new(0, cfg.sigma, kind).normalized(adapt_cfg.normalize_rewards);
    let second = EsGradient::new(0, cfg.sigma, kind).normalized(cfg.normalize_rewards);
    let inner = Evaluator::new(ev.ledger(), Executor::sequential_ref());

    let branches = ev
        .executor()
        .map(tasks, |i, task| {
            let f = task.as_ref();
            let d = &dirs[i];
            let d1 = first.estimate_with(f, theta, &d.first, inner)?;
            let adapted = theta.add_scaled(alpha, d1.vector.as_slice())?;
            let d2 = second.estimate_with(f, &adapted, &d.second, inner)?;
            let mut term = DVector::from_column_slice(d2.vector.as_slice());
            if cfg.use_hessian {
                let h = es_hess_with(f, theta, cfg.sigma, &d.hessian, inner)?;
                term += (&h.matrix * &term) * alpha;
            }
            let (value, obs) = if observe {
                let (v, o) = inner.evaluate_observed(f, &adapted)?;
                (Some(v), o)
            } else {
                (None, None)
            };
            Ok((term, value, obs))
        })
        .map_err(branch_error)?;

    let mut sum = DVector::<f64>::zeros(theta.dim());
    let mut values = Vec::new();
    let mut observations: Option<RunningNormalizer> = None;
    for (term, value, obs) in branches {
        sum += term;
        values.extend(value);
        if let Some(o) = obs {
            match observations.as_mut() {
                Some(acc) => acc.merge(&o)?,
                None => observations = Some(o),
            }
        }
    }
    let scale = cfg.beta / tasks.len() as f64;
    Ok(StepOutput {
        theta: theta.add_scaled(scale, sum.as_slice())?,
        observations,
        values,
    })
}
