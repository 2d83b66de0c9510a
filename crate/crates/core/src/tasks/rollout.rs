use std::io::Write;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::env::{EnvConfig, EnvKind, Environment, State, TaskParams};
use super::{finite_batch, stream_key, TaskDistribution, TaskInstance, TaskStream};
use crate::blackbox::{ParamVector, TaskObjective};
use crate::error::{Error, Result};
use crate::policies::{PolicySpec, RunningNormalizer};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub steps: usize,
    /// Position followed by velocity.
    pub final_state: Vec<f64>,
    /// Six-circles targets deactivated by the end of the episode.
    pub deactivated: u32,
    pub trace: Option<Vec<TraceRow>>,
    /// Raw (un-normalized) observations seen by the policy.
    pub observations: Option<RunningNormalizer>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutOptions {
    pub trace: bool,
    pub collect_observations: bool,
}

/// Runs one episode of exactly `horizon` steps.
pub fn rollout(
    env: &Environment,
    spec: &PolicySpec,
    params: &[f64],
    normalizer: Option<&RunningNormalizer>,
    horizon: usize,
    opts: RolloutOptions,
) -> Result<EpisodeResult> {
    if spec.obs_dim != env.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: env.obs_dim(),
            actual: spec.obs_dim,
        });
    }
    if spec.act_dim != EnvKind::ACT_DIM {
        return Err(Error::DimensionMismatch {
            expected: EnvKind::ACT_DIM,
            actual: spec.act_dim,
        });
    }
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    if let Some(n) = normalizer {
        if n.dim() != spec.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.obs_dim,
                actual: n.dim(),
            });
        }
    }

    let mut state = env.initial_state();
    let mut obs = vec![0.0; spec.obs_dim];
    let mut hidden = vec![0.0; spec.hidden_width];
    let mut action = vec![0.0; spec.act_dim];
    let mut total = 0.0;
    let mut trace = opts.trace.then(|| {
        let mut rows = Vec::with_capacity(horizon + 1);
        rows.push(row(0, &state, 0.0));
        rows
    });
    let mut seen = opts.collect_observations.then(|| RunningNormalizer::new(spec.obs_dim));

    for t in 0..horizon {
        env.observe(&state, &mut obs);
        if let Some(s) = seen.as_mut() {
            s.observe(&obs);
        }
        if let Some(n) = normalizer {
            n.apply_in_place(&mut obs);
        }
        spec.forward_into(params, &obs, &mut hidden, &mut action);
        let (next, reward) = env.step(&state, &action);
        if !next.is_finite() || !reward.is_finite() {
            return Err(Error::NonFiniteState { step: t });
        }
        state = next;
        total += reward;
        if let Some(rows) = trace.as_mut() {
            rows.push(row(t + 1, &state, reward));
        }
    }

    Ok(EpisodeResult {
        total_reward: total,
        steps: horizon,
        final_state: vec![state.pos[0], state.pos[1], state.vel[0], state.vel[1]],
        deactivated: env.deactivated(&state),
        trace,
        observations: seen,
    })
}

fn row(step: usize, s: &State, reward: f64) -> TraceRow {
    TraceRow {
        step,
        pos: s.pos,
        vel: s.vel,
        reward,
    }
}

/// Writes `step,x,y[,vx,vy],reward` rows.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow], with_velocity: bool) -> std::io::Result<()> {
    if with_velocity {
        writeln!(out, "step,x,y,vx,vy,reward")?;
    } else {
        writeln!(out, "step,x,y,reward")?;
    }
    for r in rows {
        if with_velocity {
            writeln!(out, "{},{},{},{},{},{}", r.step, r.pos[0], r.pos[1], r.vel[0], r.vel[1], r.reward)?;
        } else {
            writeln!(out, "{},{},{},{}", r.step, r.pos[0], r.pos[1], r.reward)?;
        }
    }
    Ok(())
}

/// `f^T(θ)`: total reward of the policy with parameters θ on one environment.
#[derive(Debug, Clone)]
pub struct PolicyRollout {
    pub env: Environment,
    pub spec: PolicySpec,
    pub normalizer: Option<Arc<RunningNormalizer>>,
    pub horizon: usize,
    pub collect_observations: bool,
    id: String,
}

impl PolicyRollout {
    pub fn new(env: Environment, spec: PolicySpec, normalizer: Option<Arc<RunningNormalizer>>, horizon: usize) -> Self {
        let id = format!("{}/{}", env.kind.name(), env.task.label());
        Self {
            collect_observations: normalizer.is_some(),
            env,
            spec,
            normalizer,
            horizon,
            id,
        }
    }

    pub fn run(&self, theta: &ParamVector, opts: RolloutOptions) -> Result<EpisodeResult> {
        rollout(&self.env, &self.spec, theta.as_slice(), self.normalizer.as_deref(), self.horizon, opts)
    }
}

impl TaskObjective for PolicyRollout {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn task_id(&self) -> &str {
        &self.id
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.run(theta, RolloutOptions::default())?.total_reward)
    }

    fn value_with_observations(&self, theta: &ParamVector) -> Result<(f64, Option<RunningNormalizer>)> {
        let opts = RolloutOptions {
            trace: false,
            collect_observations: self.collect_observations,
        };
        let ep = self.run(theta, opts)?;
        Ok((ep.total_reward, ep.observations))
    }
}

/// A navigation or locomotion task family driven by a compact policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFamily {
    pub kind: EnvKind,
    pub config: EnvConfig,
    pub policy: PolicySpec,
    pub horizon: usize,
    pub state_normalization: bool,
}

impl EnvFamily {
    pub fn new(kind: EnvKind, policy: PolicySpec, horizon: usize) -> Result<Self> {
        policy.validate()?;
        if policy.obs_dim != kind.obs_dim() || policy.act_dim != EnvKind::ACT_DIM {
            return Err(Error::invalid(format!(
                "{} needs a policy with obs_dim {} and act_dim {}, got {} and {}",
                kind.name(),
                kind.obs_dim(),
                EnvKind::ACT_DIM,
                policy.obs_dim,
                policy.act_dim
            )));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        Ok(Self {
            kind,
            config: EnvConfig::default(),
            policy,
            horizon,
            state_normalization: true,
        })
    }

    pub fn with_config(mut self, config: EnvConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_state_normalization(mut self, on: bool) -> Self {
        self.state_normalization = on;
        self
    }

    fn universe(&self) -> Vec<TaskParams> {
        match self.kind {
            EnvKind::FourCorners | EnvKind::FourCornersPenalized => (0..4).map(TaskParams::Corner).collect(),
            EnvKind::SixCircles => vec![TaskParams::Circles],
            EnvKind::ForwardBackward => vec![TaskParams::Direction(1.0), TaskParams::Direction(-1.0)],
            EnvKind::Navigation2d | EnvKind::GoalVelocity => Vec::new(),
        }
    }

    /// One independent draw from the task distribution.
    pub fn sample_task<R: Rng>(&self, rng: &mut R) -> TaskParams {
        let c = &self.config;
        match self.kind {
            EnvKind::Navigation2d => {
                let r = c.nav_target_range;
                TaskParams::Target([rng.random_range(-r..=r), rng.random_range(-r..=r)])
            }
            EnvKind::GoalVelocity => {
                let v = c.goal_velocity_max;
                TaskParams::GoalVelocity(rng.random_range(-v..=v))
            }
            _ => *self.universe().choose(rng).expect("finite universe is non-empty"),
        }
    }

    /// `count` tasks from `stream`. Finite universes are enumerated without
    /// replacement: every block of `N` consecutive tasks is a permutation.
    pub fn sample_instances(&self, stream: TaskStream, count: usize, seed: u64) -> Vec<TaskInstance> {
        let key = stream_key(seed, stream);
        let params: Vec<TaskParams> = match self.kind.universe_size() {
            Some(_) => finite_batch(&self.universe(), count, key),
            None => (0..count as u64)
                .map(|i| self.sample_task(&mut seed::stream(key, i)))
                .collect(),
        };
        params
            .into_iter()
            .map(|p| TaskInstance {
                family: self.kind.name().to_string(),
                params: p,
                episode_seed: 0,
            })
            .collect()
    }

    pub fn environment(&self, task: TaskParams) -> Environment {
        Environment::new(self.kind, self.config, task)
    }

    pub fn objective(&self, task: TaskParams, normalizer: Option<Arc<RunningNormalizer>>) -> PolicyRollout {
        let normalizer = if self.state_normalization { normalizer } else { None };
        PolicyRollout::new(self.environment(task), self.policy, normalizer, self.horizon)
    }
}

impl TaskDistribution for EnvFamily {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn param_dim(&self) -> usize {
        self.policy.param_count()
    }

    fn universe_size(&self) -> Option<usize> {
        self.kind.universe_size()
    }

    fn sample_tasks(
        &self,
        stream: TaskStream,
        count: usize,
        seed: u64,
        normalizer: Option<&Arc<RunningNormalizer>>,
    ) -> Result<Vec<Arc<dyn TaskObjective>>> {
        Ok(self
            .sample_instances(stream, count, seed)
            .into_iter()
            .map(|inst| Arc::new(self.objective(inst.params, normalizer.cloned())) as Arc<dyn TaskObjective>)
            .collect())
    }

    fn initial_normalizer(&self) -> Option<RunningNormalizer> {
        self.state_normalization.then(|| RunningNormalizer::new(self.policy.obs_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(kind: EnvKind) -> EnvFamily {
        EnvFamily::new(kind, PolicySpec::linear(kind.obs_dim(), 2), 200).unwrap()
    }

    #[test]
    fn navigation_zero_policy_at_target_scores_zero() {
        let f = family(EnvKind::Navigation2d);
        let obj = f.objective(TaskParams::Target([0.0, 0.0]), None);
        let ep = obj.run(&ParamVector::zeros(6), RolloutOptions::default()).unwrap();
        assert_eq!(ep.total_reward, 0.0);
        assert_eq!(ep.steps, 200);
    }

    #[test]
    fn every_env_runs_exactly_horizon_steps() {
        for kind in [
            EnvKind::FourCorners,
            EnvKind::FourCornersPenalized,
            EnvKind::SixCircles,
            EnvKind::Navigation2d,
            EnvKind::ForwardBackward,
            EnvKind::GoalVelocity,
        ] {
            let f = EnvFamily::new(kind, PolicySpec::linear(kind.obs_dim(), 2), 37).unwrap();
            let task = f.sample_instances(TaskStream::Train, 1, 5)[0].params;
            let theta = ParamVector::new(vec![0.3; f.policy.param_count()]).unwrap();
            let ep = f.objective(task, None).run(&theta, RolloutOptions { trace: true, collect_observations: true }).unwrap();
            assert_eq!(ep.steps, 37);
            assert_eq!(ep.trace.unwrap().len(), 38);
            assert_eq!(ep.observations.unwrap().count, 37);
        }
    }

    #[test]
    fn forward_constant_push_is_rewarded() {
        let f = family(EnvKind::ForwardBackward);
        // W = 0, b = (1, 0): constant +x action.
        let mut p = vec![0.0; 10];
        p[8] = 1.0;
        let theta = ParamVector::new(p).unwrap();
        let fwd = f.objective(TaskParams::Direction(1.0), None).value(&theta).unwrap();
        let bwd = f.objective(TaskParams::Direction(-1.0), None).value(&theta).unwrap();
        assert!(fwd > 0.0);
        assert_eq!(fwd, -bwd);
    }

    #[test]
    fn rollouts_are_bit_reproducible() {
        let f = family(EnvKind::SixCircles);
        let theta = ParamVector::new(vec![0.2, -1.1, 0.9, 0.4, 0.05, 0.1]).unwrap();
        let obj = f.objective(TaskParams::Circles, None);
        let a = obj.run(&theta, RolloutOptions { trace: true, collect_observations: false }).unwrap();
        let b = obj.run(&theta, RolloutOptions { trace: true, collect_observations: false }).unwrap();
        assert_eq!(a, b);
        assert!(a.total_reward >= -6.0 * 200.0 && a.total_reward <= 0.0);
    }

    #[test]
    fn finite_universe_without_replacement() {
        let f = family(EnvKind::FourCorners);
        let tasks = f.sample_instances(TaskStream::Train, 10, 3);
        for block in tasks.chunks(4).filter(|b| b.len() == 4) {
            let mut idx: Vec<usize> = block
                .iter()
                .map(|t| match t.params {
                    TaskParams::Corner(i) => i,
                    _ => unreachable!(),
                })
                .collect();
            idx.sort();
            assert_eq!(idx, vec![0, 1, 2, 3]);
        }
        let fb = family(EnvKind::ForwardBackward).sample_instances(TaskStream::Test, 2, 3);
        assert_ne!(fb[0].params, fb[1].params);
    }

    #[test]
    fn train_and_test_streams_differ() {
        let f = family(EnvKind::Navigation2d);
        let a = f.sample_instances(TaskStream::Train, 5, 1);
        let b = f.sample_instances(TaskStream::Test, 5, 1);
        assert!(a.iter().zip(&b).all(|(x, y)| x.params != y.params));
        for t in a {
            if let TaskParams::Target([x, y]) = t.params {
                assert!(x.abs() <= 0.5 && y.abs() <= 0.5);
            }
        }
    }

    #[test]
    fn mismatched_policy_rejected() {
        assert!(EnvFamily::new(EnvKind::ForwardBackward, PolicySpec::linear(2, 2), 10).is_err());
        let f = family(EnvKind::FourCorners);
        let env = f.environment(TaskParams::Corner(0));
        assert!(rollout(&env, &PolicySpec::linear(4, 2), &[0.0; 10], None, 5, RolloutOptions::default()).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let rows = vec![TraceRow { step: 0, pos: [0.0, 0.0], vel: [0.0, 0.0], reward: 0.0 }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows, false).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,x,y,reward\n0,0,0,0\n");
    }
}
