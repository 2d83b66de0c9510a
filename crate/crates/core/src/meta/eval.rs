use std::sync::Arc;

use super::{branch_error, mean_std};
use crate::adaptation::{adapt, AdaptationConfig};
use crate::blackbox::{Evaluator, ParamVector};
use crate::error::Result;
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};
use crate::tasks::{TaskDistribution, TaskStream};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub task_id: String,
    pub adapted_reward: f64,
    pub unadapted_reward: f64,
    pub adapted: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub records: Vec<EvalRecord>,
    pub meta_score_mean: f64,
    pub meta_score_std: f64,
    pub unadapted_mean: f64,
    pub unadapted_std: f64,
    pub adaptation_gap: f64,
}

/// MAML score `E_T f^T(U(θ, T))` on `test_task_count` held-out tasks.
///
/// Test tasks and adaptation randomness depend only on `seed`, so repeated
/// evaluations of different θ see the same tasks. Each task costs one
/// adaptation plus two evaluations.
pub fn eval_maml_score(
    theta: &ParamVector,
    family: &dyn TaskDistribution,
    adapt_cfg: &AdaptationConfig,
    test_task_count: usize,
    seed: u64,
    normalizer: Option<&Arc<RunningNormalizer>>,
    ev: Evaluator<'_>,
) -> Result<EvalSummary> {
    let tasks = family.sample_tasks(TaskStream::Test, test_task_count, seed, normalizer)?;
    let inner = Evaluator::new(ev.ledger(), Executor::sequential_ref());
    let records = ev
        .executor()
        .map(&tasks, |j, task| {
            let f = task.as_ref();
            let r = adapt(f, theta, adapt_cfg, seed::derive(seed, tag::EVAL, j as u64), inner)?;
            let adapted_reward = inner.evaluate(f, &r.adapted)?;
            let unadapted_reward = inner.evaluate(f, theta)?;
            Ok(EvalRecord {
                task_id: f.task_id().to_string(),
                adapted_reward,
                unadapted_reward,
                adapted: r.adapted,
            })
        })
        .map_err(branch_error)?;
    let adapted: Vec<f64> = records.iter().map(|r| r.adapted_reward).collect();
    let unadapted: Vec<f64> = records.iter().map(|r| r.unadapted_reward).collect();
    let (meta_score_mean, meta_score_std) = mean_std(&adapted);
    let (unadapted_mean, unadapted_std) = mean_std(&unadapted);
    Ok(EvalSummary {
        records,
        meta_score_mean,
        meta_score_std,
        unadapted_mean,
        unadapted_std,
        adaptation_gap: meta_score_mean - unadapted_mean,
    })
}
