//! Adaptation operators `U(θ, T)` under a query budget `K`.
//!
//! | kind                  | queries charged                       |
//! |-----------------------|---------------------------------------|
//! | `es_step`             | per step, the estimator cost of the largest admissible sample count within `⌊K / steps⌋` |
//! | `hill_climb`          | exactly `K`                           |
//! | `exact_gradient_step` | one per step                          |

use serde::{Deserialize, Serialize};

use crate::blackbox::{Evaluator, ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::estimators::{EsGradient, EstimatorKind};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationKind {
    #[default]
    EsStep,
    HillClimb,
    ExactGradientStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub kind: AdaptationKind,
    /// Step size. Zero makes the gradient kinds the identity.
    pub alpha: f64,
    /// Perturbation scale for gradient estimates and hill-climb candidates.
    pub sigma: f64,
    /// Query budget `K`.
    #[serde(rename = "K")]
    pub queries: usize,
    pub steps: usize,
    pub estimator: EstimatorKind,
    pub normalize_rewards: bool,
    /// Hill-climb candidates per round.
    pub population: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            kind: AdaptationKind::EsStep,
            alpha: 0.05,
            sigma: 0.1,
            queries: 20,
            steps: 1,
            estimator: EstimatorKind::ForwardFd,
            normalize_rewards: true,
            population: 5,
        }
    }
}

impl AdaptationConfig {
    pub fn es_step(alpha: f64, sigma: f64, queries: usize) -> Self {
        Self {
            alpha,
            sigma,
            queries,
            ..Self::default()
        }
    }

    pub fn hill_climb(sigma: f64, queries: usize) -> Self {
        Self {
            kind: AdaptationKind::HillClimb,
            sigma,
            queries,
            ..Self::default()
        }
    }

    pub fn exact_gradient(alpha: f64, steps: usize) -> Self {
        Self {
            kind: AdaptationKind::ExactGradientStep,
            alpha,
            queries: steps,
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("adaptation alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("adaptation sigma must be > 0, got {}", self.sigma)));
        }
        if self.queries == 0 {
            return Err(Error::invalid("adaptation query budget K must be >= 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("adaptation steps must be >= 1"));
        }
        if self.population == 0 {
            return Err(Error::invalid("hill-climb population must be >= 1"));
        }
        match self.kind {
            AdaptationKind::EsStep => {
                self.samples_per_step()?;
            }
            AdaptationKind::HillClimb if self.queries < 2 => {
                return Err(Error::BudgetTooSmall {
                    budget: self.queries,
                    reason: "hill climbing needs one baseline query and at least one candidate".into(),
                });
            }
            AdaptationKind::ExactGradientStep if self.steps > self.queries => {
                return Err(Error::BudgetTooSmall {
                    budget: self.queries,
                    reason: format!("{} exact-gradient steps need {} queries", self.steps, self.steps),
                });
            }
            _ => {}
        }
        Ok(())
    }

    /// Perturbations per es_step step.
    pub fn samples_per_step(&self) -> Result<usize> {
        let per_step = self.queries / self.steps.max(1);
        let samples = self.estimator.samples_for_budget(per_step);
        let min = if self.estimator == EstimatorKind::Antithetic { 2 } else { 1 };
        if samples < min {
            return Err(Error::BudgetTooSmall {
                budget: self.queries,
                reason: format!(
                    "{} steps of a {:?} estimate leave {} queries per step",
                    self.steps, self.estimator, per_step
                ),
            });
        }
        Ok(samples)
    }

    /// Queries one adaptation consumes.
    pub fn queries_per_adaptation(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.kind {
            AdaptationKind::EsStep => self.steps * self.estimator.cost(self.samples_per_step()?),
            AdaptationKind::HillClimb => self.queries,
            AdaptationKind::ExactGradientStep => self.steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub adapted: ParamVector,
    /// Unadapted value `f(θ)` when the operator measured it.
    pub pre_reward: Option<f64>,
    /// Value of the adapted point when the operator measured it.
    pub post_reward: Option<f64>,
    pub queries_used: usize,
}

/// Applies the configured operator. `seed` fixes every random choice.
pub fn adapt(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    cfg: &AdaptationConfig,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<AdaptationResult> {
    match cfg.kind {
        AdaptationKind::EsStep => adapt_es_step(f, theta, cfg, seed, ev),
        AdaptationKind::HillClimb => adapt_hill_climb(f, theta, cfg, seed, ev),
        AdaptationKind::ExactGradientStep => adapt_exact_gradient(f, theta, cfg, ev),
    }
}

/// `steps` ES-gradient ascent steps, the budget split evenly across them.
pub fn adapt_es_step(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    cfg: &AdaptationConfig,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<AdaptationResult> {
    cfg.validate()?;
    let samples = cfg.samples_per_step()?;
    let est = EsGradient::new(samples, cfg.sigma, cfg.estimator).normalized(cfg.normalize_rewards);
    let mut current = theta.clone();
    let mut used = 0;
    for step in 0..cfg.steps {
        let d = est.estimate(f, &current, seed::derive(seed, tag::ADAPT, step as u64), ev)?;
        used += cfg.estimator.cost(d.n_used);
        current = current.add_scaled(cfg.alpha, d.vector.as_slice())?;
    }
    Ok(AdaptationResult {
        adapted: current,
        pre_reward: None,
        post_reward: None,
        queries_used: used,
    })
}

/// Monotone population hill climbing with `K − 1` random candidates.
pub fn adapt_hill_climb(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    cfg: &AdaptationConfig,
    seed: u64,
    ev: Evaluator<'_>,
) -> Result<AdaptationResult> {
    cfg.validate()?;
    let key = seed::derive(seed, tag::HILL_CLIMB, 0);
    let directions: Vec<Vec<f64>> = (0..(cfg.queries - 1) as u64)
        .map(|j| seed::gaussian_vector(key, j, theta.dim()))
        .collect();
    adapt_hill_climb_with(f, theta, cfg, &directions, ev)
}

/// Hill climbing along explicit candidate directions: candidate `j` is
/// `θ_best + σ·directions[j]`, where `θ_best` is the incumbent at the start of
/// its round. `directions.len()` must be `K − 1`.
pub fn adapt_hill_climb_with(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    cfg: &AdaptationConfig,
    directions: &[Vec<f64>],
    ev: Evaluator<'_>,
) -> Result<AdaptationResult> {
    cfg.validate()?;
    if directions.len() + 1 != cfg.queries {
        return Err(Error::invalid(format!(
            "hill climbing with K={} needs {} directions, got {}",
            cfg.queries,
            cfg.queries - 1,
            directions.len()
        )));
    }
    let pre = ev.evaluate(f, theta)?;
    let mut best = theta.clone();
    let mut best_value = pre;
    let mut used = 1;
    for round in directions.chunks(cfg.population) {
        let candidates = round
            .iter()
            .map(|g| best.add_scaled(cfg.sigma, g))
            .collect::<Result<Vec<_>>>()?;
        let values = ev.evaluate_batch(f, &candidates)?;
        used += candidates.len();
        let mut winner = None;
        for (j, v) in values.iter().enumerate() {
            if *v > best_value {
                best_value = *v;
                winner = Some(j);
            }
        }
        if let Some(j) = winner {
            best = candidates[j].clone();
        }
    }
    Ok(AdaptationResult {
        adapted: best,
        pre_reward: Some(pre),
        post_reward: Some(best_value),
        queries_used: used,
    })
}

/// `steps` exact gradient ascent steps. Each gradient query costs one query.
pub fn adapt_exact_gradient(
    f: &dyn TaskObjective,
    theta: &ParamVector,
    cfg: &AdaptationConfig,
    ev: Evaluator<'_>,
) -> Result<AdaptationResult> {
    cfg.validate()?;
    if !f.has_exact_gradient() {
        return Err(Error::NoExactGradient(f.task_id().to_string()));
    }
    let mut current = theta.clone();
    for _ in 0..cfg.steps {
        let g = f.exact_gradient(&current);
        ev.ledger().record(1, f.query_cost());
        current = current.add_scaled(cfg.alpha, g?.as_slice())?;
    }
    Ok(AdaptationResult {
        adapted: current,
        pre_reward: None,
        post_reward: None,
        queries_used: cfg.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::QueryLedger;
    use crate::tasks::analytic::{AnalyticObjective, FnObjective};
    use crate::tasks::sine::SineFamily;
    use crate::policies::PolicySpec;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn es_step_with_zero_alpha_is_identity_but_spends_budget() {
        let f = FnObjective::new("sq", 3, |t| -t.iter().map(|x| x * x).sum::<f64>());
        let theta = p(&[0.3, -1.0, 2.0]);
        let cfg = AdaptationConfig::es_step(0.0, 0.1, 20);
        let ledger = QueryLedger::new();
        let r = adapt(&f, &theta, &cfg, 9, Evaluator::sequential(&ledger)).unwrap();
        assert_eq!(r.adapted, theta);
        assert_eq!(r.queries_used, 20);
        assert_eq!(ledger.total_evaluations(), 20);
    }

    #[test]
    fn es_step_antithetic_linear_example() {
        let f = FnObjective::new("lin", 2, |t| t[0]);
        let cfg = AdaptationConfig {
            estimator: EstimatorKind::Antithetic,
            normalize_rewards: false,
            ..AdaptationConfig::es_step(0.05, 0.1, 2)
        };
        let batch = crate::estimators::PerturbationBatch::from_directions(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            crate::estimators::PerturbationMode::AntitheticPairs,
        )
        .unwrap();
        let ledger = QueryLedger::new();
        let est = EsGradient::new(2, cfg.sigma, cfg.estimator);
        let d = est.estimate_with(&f, &p(&[0.0, 0.0]), &batch, Evaluator::sequential(&ledger)).unwrap();
        let adapted = p(&[0.0, 0.0]).add_scaled(cfg.alpha, d.vector.as_slice()).unwrap();
        assert!((adapted[0] - 0.05).abs() < 1e-15);
        assert_eq!(adapted[1], 0.0);
    }

    #[test]
    fn es_step_improves_concave_bowl_on_average() {
        let f = FnObjective::new("bowl", 2, |t| -t.iter().map(|x| x * x).sum::<f64>());
        let theta = p(&[1.0, 1.0]);
        let cfg = AdaptationConfig::es_step(0.05, 0.1, 50);
        let ledger = QueryLedger::new();
        let ev = Evaluator::sequential(&ledger);
        let mean: f64 = (0..100)
            .map(|s| f.value(&adapt(&f, &theta, &cfg, s, ev).unwrap().adapted).unwrap())
            .sum::<f64>()
            / 100.0;
        assert!(mean > -2.0, "mean adapted value {mean}");
    }

    #[test]
    fn multi_step_splits_budget() {
        let f = FnObjective::new("c", 2, |_| 1.0);
        let cfg = AdaptationConfig {
            steps: 3,
            ..AdaptationConfig::es_step(0.05, 0.1, 20)
        };
        let ledger = QueryLedger::new();
        let r = adapt(&f, &p(&[0.0, 0.0]), &cfg, 1, Evaluator::sequential(&ledger)).unwrap();
        // ⌊20/3⌋ = 6 queries per step: 5 perturbations plus the center.
        assert_eq!(r.queries_used, 18);
        assert_eq!(ledger.total_evaluations(), 18);
        assert_eq!(cfg.queries_per_adaptation().unwrap(), 18);
        let tight = AdaptationConfig { steps: 11, ..cfg };
        assert!(matches!(tight.validate(), Err(Error::BudgetTooSmall { .. })));
    }

    #[test]
    fn hill_climb_two_candidate_pick() {
        let f = FnObjective::new("neg_sq", 1, |t| -t[0] * t[0]);
        let cfg = AdaptationConfig::hill_climb(0.5, 3);
        let ledger = QueryLedger::new();
        let r = adapt_hill_climb_with(&f, &p(&[1.0]), &cfg, &[vec![1.0], vec![-1.0]], Evaluator::sequential(&ledger)).unwrap();
        assert_eq!(r.adapted, p(&[0.5]));
        assert_eq!(r.post_reward, Some(-0.25));
        assert_eq!(r.pre_reward, Some(-1.0));
        assert_eq!(r.queries_used, 3);
        assert_eq!(ledger.total_evaluations(), 3);
    }

    #[test]
    fn hill_climb_ties_keep_incumbent() {
        let f = FnObjective::new("flat", 2, |_| 0.0);
        let cfg = AdaptationConfig::hill_climb(0.5, 7);
        let ledger = QueryLedger::new();
        let r = adapt(&f, &p(&[0.1, 0.2]), &cfg, 3, Evaluator::sequential(&ledger)).unwrap();
        assert_eq!(r.adapted, p(&[0.1, 0.2]));
    }

    #[test]
    fn hill_climb_budget_is_exact() {
        let f = FnObjective::new("sq", 2, |t| -t[0] * t[0] - t[1]);
        let ledger = QueryLedger::new();
        for k in 2..40 {
            let before = ledger.total_evaluations();
            let r = adapt(&f, &p(&[0.5, 0.5]), &AdaptationConfig::hill_climb(0.1, k), k as u64, Evaluator::sequential(&ledger)).unwrap();
            assert_eq!(r.queries_used, k);
            assert_eq!(ledger.total_evaluations() - before, k as u64);
        }
        assert!(matches!(
            AdaptationConfig::hill_climb(0.1, 1).validate(),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn exact_gradient_requires_gradient_contract() {
        let f = FnObjective::new("c", 1, |_| 0.0);
        let ledger = QueryLedger::new();
        let err = adapt(&f, &p(&[0.0]), &AdaptationConfig::exact_gradient(0.1, 1), 0, Evaluator::sequential(&ledger));
        assert!(matches!(err, Err(Error::NoExactGradient(_))));
    }

    #[test]
    fn exact_gradient_identity_cases() {
        let bowl = AnalyticObjective::bowl(&[1.0, 2.0], 1.0);
        let ledger = QueryLedger::new();
        let ev = Evaluator::sequential(&ledger);
        let at_opt = adapt(&bowl, &p(&[1.0, 2.0]), &AdaptationConfig::exact_gradient(0.1, 2), 0, ev).unwrap();
        assert_eq!(at_opt.adapted, p(&[1.0, 2.0]));
        let zero = adapt(&bowl, &p(&[0.0, 0.0]), &AdaptationConfig::exact_gradient(0.0, 1), 0, ev).unwrap();
        assert_eq!(zero.adapted, p(&[0.0, 0.0]));
        assert_eq!(ledger.total_evaluations(), 3);
    }

    #[test]
    fn exact_gradient_step_descends_on_sine_tasks() {
        let spec = PolicySpec::mlp(1, 1, 32).with_squash(false);
        let fam = SineFamily::new(spec, 10).unwrap();
        let ledger = QueryLedger::new();
        let cfg = AdaptationConfig::exact_gradient(0.01, 1);
        for i in 0..100 {
            let task = fam.task(5, i);
            let theta = spec.initial_params(i);
            let r = adapt(&task, &theta, &cfg, 0, Evaluator::sequential(&ledger)).unwrap();
            assert!(task.support_loss(&r.adapted).unwrap() < task.support_loss(&theta).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn hill_climb_never_regresses(
            center in prop::collection::vec(-3.0f64..3.0, 3),
            start in prop::collection::vec(-3.0f64..3.0, 3),
            scale in 0.01f64..10.0,
            sigma in 0.01f64..2.0,
            k in 2usize..30,
            seed in any::<u64>(),
        ) {
            let f = AnalyticObjective::bowl(&center, scale);
            let theta = ParamVector::new(start).unwrap();
            let ledger = QueryLedger::new();
            let r = adapt(&f, &theta, &AdaptationConfig::hill_climb(sigma, k), seed, Evaluator::sequential(&ledger)).unwrap();
            prop_assert!(f.value(&r.adapted).unwrap() >= f.value(&theta).unwrap());
            prop_assert_eq!(r.queries_used, k);
        }
    }
}
