//! Self-describing JSON checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::CliError;
use crate::blackbox::ParamVector;
use crate::meta::TrainState;
use crate::policies::{Architecture, PolicySpec, RunningNormalizer};
use crate::tasks::FamilyName;

pub const FORMAT: &str = "esmaml-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub family: FamilyName,
    pub policy: PolicySpec,
    pub param_count: usize,
    pub seed: u64,
    pub iteration: usize,
    pub rollouts: u64,
    /// Human-readable description of the flat parameter layout.
    pub layout: String,
    pub params: ParamVector,
    pub normalizer: Option<RunningNormalizer>,
    pub config: RunConfig,
}

pub fn layout_description(spec: &PolicySpec) -> String {
    match spec.arch {
        Architecture::Linear => format!("W[{}x{}] row-major, b[{}]", spec.act_dim, spec.obs_dim, spec.act_dim),
        Architecture::Mlp => format!(
            "W1[{h}x{o}] row-major, b1[{h}], W2[{a}x{h}] row-major, b2[{a}]",
            h = spec.hidden_width,
            o = spec.obs_dim,
            a = spec.act_dim
        ),
    }
}

impl Checkpoint {
    pub fn new(config: &RunConfig, spec: PolicySpec, state: &TrainState) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            family: config.family,
            policy: spec,
            param_count: spec.param_count(),
            seed: config.seed,
            iteration: state.iteration,
            rollouts: state.rollouts,
            layout: layout_description(&spec),
            params: state.theta.clone(),
            normalizer: state.normalizer.clone(),
            config: config.clone().resolved(),
        }
    }

    pub fn file_name(iteration: usize) -> String {
        format!("iter_{iteration:06}")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(Self::file_name(self.iteration));
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid checkpoint {}: {e}", path.display())))?;
        ckpt.check()?;
        Ok(ckpt)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(CliError::Usage(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        if self.param_count != self.policy.param_count() || self.params.dim() != self.param_count {
            return Err(CliError::Usage(format!(
                "checkpoint holds {} parameters but its policy needs {}",
                self.params.dim(),
                self.policy.param_count()
            )));
        }
        if let Some(n) = &self.normalizer {
            if n.dim() != self.policy.obs_dim {
                return Err(CliError::Usage("checkpoint normalizer does not match the policy".into()));
            }
        }
        Ok(())
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            theta: self.params.clone(),
            normalizer: self.normalizer.clone(),
            iteration: self.iteration,
            rollouts: self.rollouts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = RunConfig::default();
        let spec = cfg.policy_spec();
        let mut norm = RunningNormalizer::new(2);
        norm.observe(&[0.1, 1.0 / 3.0]);
        norm.observe(&[std::f64::consts::PI, -2.0e-7]);
        let state = TrainState {
            theta: ParamVector::new(vec![0.1, 0.2, 1.0 / 3.0, -7.25e-12, 1e300, 2.0]).unwrap(),
            normalizer: Some(norm),
            iteration: 12,
            rollouts: 34_567,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = Checkpoint::new(&cfg, spec, &state).save(dir.path()).unwrap();
        assert!(path.ends_with("iter_000012"));
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.state(), state);
        assert_eq!(back.layout, "W[2x2] row-major, b[2]");
    }

    #[test]
    fn tampered_param_count_rejected() {
        let cfg = RunConfig::default();
        let spec = cfg.policy_spec();
        let state = TrainState {
            theta: ParamVector::zeros(6),
            normalizer: None,
            iteration: 0,
            rollouts: 0,
        };
        let mut ck = Checkpoint::new(&cfg, spec, &state);
        ck.params = ParamVector::zeros(7);
        let dir = tempfile::tempdir().unwrap();
        let path = ck.save(dir.path()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CliError::Usage(_))));
    }
}
