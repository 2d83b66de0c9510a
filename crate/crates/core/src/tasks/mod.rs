//! Task families: point-mass exploration and locomotion surrogates, sine
//! regression, and analytic objectives with known smoothed derivatives.

pub mod analytic;
pub mod env;
pub mod rollout;
pub mod sine;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blackbox::TaskObjective;
use crate::error::{Error, Result};
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};

pub use analytic::{analytic_objectives, AnalyticObjective, FixedFamily, FnObjective};
pub use env::{EnvConfig, EnvKind, Environment, State, TaskParams};
pub use rollout::{rollout, write_trace_csv, EnvFamily, EpisodeResult, PolicyRollout, RolloutOptions, TraceRow};
pub use sine::{SineFamily, SineTask};

/// Training and held-out task streams. They draw from disjoint seed partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskStream {
    Train,
    Test,
}

pub(crate) fn stream_key(seed: u64, stream: TaskStream) -> u64 {
    let t = match stream {
        TaskStream::Train => tag::TRAIN_TASKS,
        TaskStream::Test => tag::TEST_TASKS,
    };
    seed::derive(seed, t, 0)
}

/// `count` items from `universe`, drawn as concatenated random permutations so
/// that no item repeats before the whole universe has been used.
pub(crate) fn finite_batch<T: Copy>(universe: &[T], count: usize, key: u64) -> Vec<T> {
    let mut out = Vec::with_capacity(count);
    let mut block = 0u64;
    while out.len() < count {
        let mut perm: Vec<T> = universe.to_vec();
        perm.shuffle(&mut seed::stream(key, block));
        out.extend(perm.into_iter().take(count - out.len()));
        block += 1;
    }
    out
}

/// One sampled task. Together with its family it fully determines `f^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub family: String,
    pub params: TaskParams,
    pub episode_seed: u64,
}

/// A distribution over tasks, `P(T)`.
pub trait TaskDistribution: Send + Sync {
    fn name(&self) -> &str;

    /// Dimension of the parameter vector every task objective expects.
    fn param_dim(&self) -> usize;

    /// `Some(N)` for finite task universes.
    fn universe_size(&self) -> Option<usize>;

    /// `count` task objectives from `stream`, fully determined by `seed`.
    /// Policy tasks normalize observations with `normalizer` when given.
    fn sample_tasks(
        &self,
        stream: TaskStream,
        count: usize,
        seed: u64,
        normalizer: Option<&Arc<RunningNormalizer>>,
    ) -> Result<Vec<Arc<dyn TaskObjective>>>;

    /// Fresh state normalizer, for families that use one.
    fn initial_normalizer(&self) -> Option<RunningNormalizer> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    FourCorners,
    FourCornersPenalized,
    SixCircles,
    Navigation2d,
    ForwardBackward,
    GoalVelocity,
    Sine,
}

impl FamilyName {
    pub const ALL: [FamilyName; 7] = [
        FamilyName::FourCorners,
        FamilyName::FourCornersPenalized,
        FamilyName::SixCircles,
        FamilyName::Navigation2d,
        FamilyName::ForwardBackward,
        FamilyName::GoalVelocity,
        FamilyName::Sine,
    ];

    pub fn as_str(self) -> &'static str {
        match self.env_kind() {
            Some(kind) => kind.name(),
            None => "sine",
        }
    }

    /// The point-mass environment behind the family, if any.
    pub fn env_kind(self) -> Option<EnvKind> {
        match self {
            FamilyName::FourCorners => Some(EnvKind::FourCorners),
            FamilyName::FourCornersPenalized => Some(EnvKind::FourCornersPenalized),
            FamilyName::SixCircles => Some(EnvKind::SixCircles),
            FamilyName::Navigation2d => Some(EnvKind::Navigation2d),
            FamilyName::ForwardBackward => Some(EnvKind::ForwardBackward),
            FamilyName::GoalVelocity => Some(EnvKind::GoalVelocity),
            FamilyName::Sine => None,
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FamilyName::ALL.iter().map(|f| f.as_str()).collect();
                Error::invalid(format!("unknown task family `{s}` (expected one of {})", names.join(", ")))
            })
    }
}
