//! Blackbox meta-learning with evolution strategies.
//!
//! Zeroth-order gradient and Hessian estimators of Gaussian smoothings, query
//! budgeted adaptation operators, zero-order and first-order ES-MAML outer
//! loops, compact deterministic policies, desk-scale task families, and an
//! experiment runner whose results do not depend on the worker count.

pub mod adaptation;
pub mod blackbox;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod meta;
pub mod parallel;
pub mod policies;
pub mod seed;
pub mod tasks;

pub use blackbox::{evaluate, normalize_rewards, Evaluator, ParamVector, QueryLedger, RewardBatch, TaskObjective};
pub use error::{Error, Result};
pub use parallel::{deterministic_parallel_map, Executor};
