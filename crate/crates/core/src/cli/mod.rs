//! Experiment runner behind the `esmaml` binary.
//!
//! ```text
//! esmaml train --config F [--set k=v]... [--seed N] [--workers W] [--out DIR] [--resume CKPT]
//! esmaml eval  --checkpoint F --family NAME --K N --trials N [--out DIR] [--seed N]
//! ```
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on invalid usage,
//! configuration or checkpoint.

pub mod checkpoint;
pub mod commands;
pub mod config;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_eval, cmd_train, EvalArgs, TrainArgs, CSV_HEADER, EVAL_CSV_HEADER};
pub use config::{FamilySetup, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
