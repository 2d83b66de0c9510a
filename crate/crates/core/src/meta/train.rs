use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{eval_maml_score, fo_esmaml_step, zo_esmaml_step, Algorithm, MetaConfig, MetaIterationReport};
use crate::adaptation::AdaptationConfig;
use crate::blackbox::{Evaluator, ParamVector, QueryLedger};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};
use crate::tasks::TaskDistribution;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: ParamVector,
    pub normalizer: Option<RunningNormalizer>,
    /// Completed iterations.
    pub iteration: usize,
    pub rollouts: u64,
}

impl TrainState {
    pub fn initial(theta: ParamVector, family: &dyn TaskDistribution) -> Self {
        Self {
            theta,
            normalizer: family.initial_normalizer(),
            iteration: 0,
            rollouts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub reports: Vec<MetaIterationReport>,
}

/// Runs iterations `state.iteration .. cfg.iterations`.
///
/// The state normalizer is frozen within an iteration and absorbs that
/// iteration's observation statistics at its end. After every `eval_every`-th
/// iteration the held-out score is computed with the updated normalizer and
/// passed to `on_report` together with the state it describes.
#[allow(clippy::too_many_arguments)]
pub fn train<F>(
    mut state: TrainState,
    family: &dyn TaskDistribution,
    cfg: &MetaConfig,
    adapt_cfg: &AdaptationConfig,
    seed: u64,
    exec: &Executor,
    mut on_report: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&MetaIterationReport, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    adapt_cfg.validate()?;
    if state.theta.dim() != family.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.param_dim(),
            actual: state.theta.dim(),
        });
    }
    let ledger = QueryLedger::with_totals(0, state.rollouts);
    let ev = Evaluator::new(&ledger, exec);
    let started = Instant::now();
    let mut reports = Vec::new();

    for t in state.iteration..cfg.iterations {
        let frozen = state.normalizer.clone().map(Arc::new);
        let step_seed = seed::derive(seed, tag::ITERATION, t as u64);
        let out = match cfg.algorithm {
            Algorithm::ZeroOrder => zo_esmaml_step(&state.theta, family, cfg, adapt_cfg, step_seed, frozen.as_ref(), ev)?,
            Algorithm::FirstOrder => fo_esmaml_step(&state.theta, family, cfg, adapt_cfg, step_seed, frozen.as_ref(), ev)?,
        };
        state.theta = out.theta;
        if let (Some(norm), Some(obs)) = (state.normalizer.as_mut(), out.observations.as_ref()) {
            norm.merge(obs)?;
        }
        state.iteration = t + 1;

        if state.iteration.is_multiple_of(cfg.eval_every) {
            let norm = state.normalizer.clone().map(Arc::new);
            let summary = eval_maml_score(&state.theta, family, adapt_cfg, cfg.test_task_count, seed, norm.as_ref(), ev)?;
            state.rollouts = ledger.total_rollouts();
            let report = MetaIterationReport {
                iteration: state.iteration,
                meta_score_mean: summary.meta_score_mean,
                meta_score_std: summary.meta_score_std,
                unadapted_mean: summary.unadapted_mean,
                adaptation_gap: summary.adaptation_gap,
                rollouts_cumulative: state.rollouts,
                wallclock_s: started.elapsed().as_secs_f64(),
            };
            on_report(&report, &state)?;
            reports.push(report);
        }
    }
    state.rollouts = ledger.total_rollouts();
    Ok(TrainOutcome { state, reports })
}
