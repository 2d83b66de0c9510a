//! Run configuration: a TOML file with `[meta]`, `[adapt]`, `[policy]`,
//! `[task]` and `[env]` sections, patched by `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::CliError;
use crate::adaptation::{AdaptationConfig, AdaptationKind};
use crate::meta::MetaConfig;
use crate::policies::{Architecture, PolicySpec, DEFAULT_HIDDEN_WIDTH};
use crate::tasks::{EnvConfig, EnvFamily, EnvKind, FamilyName, SineFamily, TaskDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Defaults to `mlp` for sine regression and `linear` otherwise.
    pub arch: Option<Architecture>,
    pub hidden_width: usize,
    pub action_bound: f64,
    /// Defaults to off for sine regression and on otherwise.
    pub squash: Option<bool>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            arch: None,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            action_bound: 1.0,
            squash: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub horizon: usize,
    pub state_normalization: bool,
    /// Sine regression: points the task value is measured on.
    pub query_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            state_normalization: true,
            query_size: SineFamily::DEFAULT_QUERY_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyName,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Iterations between checkpoints; 0 writes one at every report.
    pub checkpoint_every: usize,
    pub meta: MetaConfig,
    pub adapt: AdaptationConfig,
    pub policy: PolicyConfig,
    pub task: TaskConfig,
    /// Point-mass geometry and reward constants.
    pub env: EnvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::FourCorners,
            seed: 0,
            workers: 1,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            meta: MetaConfig::default(),
            adapt: AdaptationConfig::default(),
            policy: PolicyConfig::default(),
            task: TaskConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

/// A built task family.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilySetup {
    Env(EnvFamily),
    Sine(SineFamily),
}

impl FamilySetup {
    pub fn distribution(&self) -> &dyn TaskDistribution {
        match self {
            FamilySetup::Env(f) => f,
            FamilySetup::Sine(f) => f,
        }
    }

    pub fn policy(&self) -> PolicySpec {
        match self {
            FamilySetup::Env(f) => f.policy,
            FamilySetup::Sine(f) => f.spec,
        }
    }
}

impl RunConfig {
    /// Parses TOML text, then applies `key.path=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        if overrides.is_empty() {
            return Ok(cfg);
        }
        let mut table: Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Table::try_into(table).map_err(|e| CliError::Usage(format!("invalid override: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills family-dependent defaults so the config states every effective
    /// setting.
    pub fn resolved(mut self) -> Self {
        let sine = self.family == FamilyName::Sine;
        self.policy.arch.get_or_insert(if sine { Architecture::Mlp } else { Architecture::Linear });
        self.policy.squash.get_or_insert(!sine);
        self
    }

    pub fn policy_spec(&self) -> PolicySpec {
        let cfg = self.clone().resolved();
        let (obs_dim, act_dim) = match self.family.env_kind() {
            Some(kind) => (kind.obs_dim(), EnvKind::ACT_DIM),
            None => (1, 1),
        };
        PolicySpec {
            arch: cfg.policy.arch.unwrap_or_default(),
            obs_dim,
            act_dim,
            hidden_width: cfg.policy.hidden_width,
            action_bound: cfg.policy.action_bound,
            squash: cfg.policy.squash.unwrap_or(true),
        }
    }

    /// Checks every section and builds the task family.
    pub fn build(&self) -> Result<FamilySetup, CliError> {
        let usage = |e: crate::Error| CliError::Usage(e.to_string());
        self.meta.validate().map_err(usage)?;
        self.adapt.validate().map_err(usage)?;
        if self.workers == 0 {
            return Err(CliError::Usage("workers must be >= 1".into()));
        }
        let spec = self.policy_spec();
        spec.validate().map_err(usage)?;
        match self.family.env_kind() {
            Some(kind) => {
                if self.adapt.kind == AdaptationKind::ExactGradientStep {
                    return Err(CliError::Usage(format!(
                        "{} does not provide exact gradients; use es_step or hill_climb",
                        self.family
                    )));
                }
                let fam = EnvFamily::new(kind, spec, self.task.horizon)
                    .map_err(usage)?
                    .with_config(self.env)
                    .with_state_normalization(self.task.state_normalization);
                Ok(FamilySetup::Env(fam))
            }
            None => {
                let fam = SineFamily::new(spec, self.adapt.queries)
                    .map_err(usage)?
                    .with_query_size(self.task.query_size)
                    .map_err(usage)?;
                Ok(FamilySetup::Sine(fam))
            }
        }
    }

    /// Every effective setting as sorted `dotted.key = value` lines. The
    /// result parses back to the same configuration.
    pub fn to_resolved_string(&self) -> String {
        let table = Table::try_from(self.clone().resolved()).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &table, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { quote_key(k) } else { format!("{prefix}.{}", quote_key(k)) };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push(format!("{key} = {other}")),
        }
    }
}

fn quote_key(k: &str) -> String {
    if k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        format!("{:?}", k)
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn apply_override(table: &mut Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override `{item}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for seg in parents {
        let entry = cur.entry(seg.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override `{item}`: `{seg}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::parse("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.meta.beta, 0.01);
        assert_eq!(cfg.adapt.queries, 20);
    }

    #[test]
    fn dotted_keys_and_sections() {
        let text = "family = \"sine\"\nmeta.beta = 0.02\n[adapt]\nK = 5\nkind = \"exact_gradient_step\"\n";
        let cfg = RunConfig::parse(text, &[]).unwrap();
        assert_eq!(cfg.family, FamilyName::Sine);
        assert_eq!(cfg.meta.beta, 0.02);
        assert_eq!(cfg.adapt.queries, 5);
        let spec = cfg.policy_spec();
        assert_eq!(spec.arch, Architecture::Mlp);
        assert!(!spec.squash);
        assert_eq!(spec.param_count(), 97);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("[meta]\nbetta = 0.1\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("betta"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(RunConfig::parse("", &["meta.nope=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::parse(
            "[meta]\nn = 4\n",
            &["meta.n=8".into(), "family=six_circles".into(), "adapt.kind=hill_climb".into(), "meta.n=9".into()],
        )
        .unwrap();
        assert_eq!(cfg.meta.n, 9);
        assert_eq!(cfg.family, FamilyName::SixCircles);
        assert_eq!(cfg.adapt.kind, AdaptationKind::HillClimb);
        assert!(RunConfig::parse("", &["no_equals".into()]).is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = RunConfig::parse("", &["meta.sigma=0.3".into(), "env.penalty=4.5".into()]).unwrap();
        let text = cfg.to_resolved_string();
        assert!(text.contains("meta.sigma = 0.3"));
        assert!(text.contains("policy.arch = \"linear\""));
        let back = RunConfig::parse(&text, &[]).unwrap();
        assert_eq!(back, cfg.clone().resolved());
        assert_eq!(back.to_resolved_string(), text);
    }

    #[test]
    fn exact_gradient_rejected_for_rollout_families() {
        let cfg = RunConfig::parse("adapt.kind = \"exact_gradient_step\"\nadapt.K = 1\n", &[]).unwrap();
        assert!(matches!(cfg.build(), Err(CliError::Usage(_))));
    }
}
