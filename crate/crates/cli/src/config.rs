//! Run configuration: a TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use robust_crl::envs::{frozen_lake, garnet, n_chain, resolve_threshold, taxi, ThresholdRule, DEFAULT_GAMMA};
use robust_crl::online::{OnlineConfig, DEFAULT_INNER_CAP};
use robust_crl::optimizer::{ConstantsTable, Schedule, DEFAULT_NU, DEFAULT_TAU};
use robust_crl::td::StepSizeRule;
use robust_crl::{ContaminationSet, SmoothingParam, TabularCMDP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::MdpDocument;

/// Configuration problems. The binary exits with status 2 on these.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing config field `{0}`")]
    Missing(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn missing(field: &str) -> anyhow::Error {
    ConfigError::Missing(field.to_owned()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact-gradient robust primal-dual.
    ExactRpd,
    RobustRpd,
    HeuristicPd,
    NonrobustPd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::ExactRpd => "exact_rpd",
            Self::RobustRpd => "robust_rpd",
            Self::HeuristicPd => "heuristic_pd",
            Self::NonrobustPd => "nonrobust_pd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Garnet,
    FrozenLake,
    Taxi,
    NChain,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    HalfRandomMax,
    Active,
}

/// `threshold = 3.5` or `threshold = "active"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Fixed(f64),
    Rule(RuleName),
}

impl ThresholdSetting {
    pub fn rule(self) -> ThresholdRule {
        match self {
            Self::Fixed(b) => ThresholdRule::Fixed { b },
            Self::Rule(RuleName::HalfRandomMax) => ThresholdRule::HalfRandomMax,
            Self::Rule(RuleName::Active) => ThresholdRule::Active,
        }
    }
}

pub const DEFAULT_SLIP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sn: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub an: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Unset keeps a file's thresholds and otherwise uses half the best
    /// random-policy robust utility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSetting>,
}

impl EnvConfig {
    fn need<T: Copy>(v: Option<T>, field: &str) -> anyhow::Result<T> {
        v.ok_or_else(|| missing(&format!("env.{field}")))
    }

    /// Generates or loads the environment and resolves its threshold under
    /// contamination `delta`.
    pub fn build(&self, delta: f64) -> anyhow::Result<TabularCMDP> {
        let mdp = match self.kind {
            EnvName::Garnet => garnet(Self::need(self.sn, "sn")?, Self::need(self.an, "an")?, self.seed)?,
            EnvName::FrozenLake => frozen_lake(Self::need(self.size, "size")?, self.seed)?,
            EnvName::Taxi => taxi(self.seed)?,
            EnvName::NChain => n_chain(Self::need(self.n, "n")?, self.seed, self.slip.unwrap_or(DEFAULT_SLIP))?,
            EnvName::File => {
                let path = self.path.as_ref().ok_or_else(|| missing("env.path"))?;
                MdpDocument::load(path)?.to_mdp()?
            }
        };
        let default_gamma = if self.kind == EnvName::File { mdp.gamma() } else { DEFAULT_GAMMA };
        let mdp = mdp.with_gamma(self.gamma.unwrap_or(default_gamma))?;
        let setting = match (self.threshold, self.kind) {
            (Some(t), _) => t,
            (None, EnvName::File) => return Ok(mdp),
            (None, _) => ThresholdSetting::Rule(RuleName::HalfRandomMax),
        };
        let b = resolve_threshold(setting.rule(), &mdp, &ContaminationSet::new(delta)?, self.seed)?;
        Ok(mdp.with_thresholds(vec![b])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Theoretical,
    Practical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Dual bound; estimated from random policies when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

impl ScheduleConfig {
    pub fn build(&self, consts: &ConstantsTable, lambda_max: f64) -> anyhow::Result<Schedule> {
        let field = |v: Option<f64>, name: &str| v.ok_or_else(|| missing(&format!("schedule.{name}")));
        Ok(match self.kind {
            ScheduleName::Theoretical => Schedule::theoretical(
                consts,
                lambda_max,
                self.nu.unwrap_or(DEFAULT_NU),
                self.tau.unwrap_or(DEFAULT_TAU),
            )?,
            ScheduleName::Practical => Schedule::practical(
                lambda_max,
                field(self.theta_step, "theta_step")?,
                field(self.lambda_step, "lambda_step")?,
                field(self.reg, "reg")?,
            )?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdStepName {
    /// Clock per state-action pair.
    PerPair,
    /// One global clock.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSection {
    pub eps_est: f64,
    pub kappa: f64,
    pub inner_cap: usize,
    pub td_step: TdStepName,
}

impl Default for OnlineSection {
    fn default() -> Self {
        Self { eps_est: 0.005, kappa: 1.0, inner_cap: DEFAULT_INNER_CAP, td_step: TdStepName::PerPair }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// TD evaluations per policy and replica.
    pub n_reps: usize,
    /// Transitions per TD evaluation.
    pub sample_size: usize,
    /// Keep every `stride`-th iterate (and the last) for evaluation.
    pub stride: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_reps: 1, sample_size: 200, stride: 1, seed: 0 }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub delta: f64,
    pub sigma: f64,
    pub steps: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Pulls the field name out of a serde "missing field" message.
fn classify(msg: &str) -> ConfigError {
    match msg.split("missing field `").nth(1).and_then(|rest| rest.split('`').next()) {
        Some(name) => ConfigError::Missing(name.to_owned()),
        None => ConfigError::Invalid(msg.trim().to_owned()),
    }
}

/// Sets `dotted.key` in a TOML table; `raw` is parsed as a TOML value and
/// falls back to a string.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| ConfigError::Invalid(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text after applying `key=value` overrides.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| classify(e.message()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| classify(e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the config echoed in a `manifest.json`.
    /// Relative env paths are taken from the config file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)?;
            let echo = manifest.get("config").ok_or_else(|| missing("config"))?;
            let as_toml = toml::to_string(&serde_json::from_value::<RunConfig>(echo.clone()).map_err(|e| classify(&e.to_string()))?)?;
            Self::parse(&as_toml, overrides)?
        } else {
            Self::parse(&text, overrides)?
        };
        if let (Some(p), Some(dir)) = (cfg.env.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if !(0.0..1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1)");
        }
        if !(self.sigma < 0.0) {
            return bad("sigma must be negative");
        }
        if self.steps == 0 || self.replicas == 0 {
            return bad("steps and replicas must be positive");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.eval.stride == 0 || self.eval.n_reps == 0 {
            return bad("eval.stride and eval.n_reps must be positive");
        }
        Ok(())
    }

    pub fn sigma(&self) -> anyhow::Result<SmoothingParam> {
        Ok(SmoothingParam::new(self.sigma)?)
    }

    /// Run seed of replica `i`.
    pub fn replica_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn online(&self, mdp: &TabularCMDP, schedule: Schedule, seed: u64) -> anyhow::Result<OnlineConfig> {
        let td_step = match self.online.td_step {
            TdStepName::PerPair => StepSizeRule::per_pair(mdp.gamma(), mdp.n_states() * mdp.n_actions()),
            TdStepName::Global => StepSizeRule::for_gamma(mdp.gamma()),
        };
        Ok(OnlineConfig {
            outer_steps: self.steps,
            eps_est: self.online.eps_est,
            kappa: self.online.kappa,
            inner_cap: self.online.inner_cap,
            sigma: self.sigma()?,
            td_step,
            schedule,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
delta = 0.2
sigma = -10.0
steps = 5
methods = ["exact_rpd"]

[env]
kind = "garnet"
sn = 2
an = 1

[schedule]
kind = "theoretical"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.replicas, 1);
        assert_eq!(c.eval.sample_size, 200);
        assert_eq!(c.online.td_step, TdStepName::PerPair);
        assert!(c.env.threshold.is_none());
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("delta = 0.2\n", "");
        assert_eq!(RunConfig::parse(&text, &[]).unwrap_err(), ConfigError::Missing("delta".into()));
    }

    #[test]
    fn missing_generator_field_is_named() {
        let c = RunConfig::parse(&MINIMAL.replace("an = 1\n", ""), &[]).unwrap();
        let err = c.env.build(0.2).unwrap_err();
        assert_eq!(err.downcast_ref::<ConfigError>(), Some(&ConfigError::Missing("env.an".into())));
    }

    #[test]
    fn overrides_nested_and_typed() {
        let o = [
            ("env.threshold".to_owned(), "\"active\"".to_owned()),
            ("steps".to_owned(), "9".to_owned()),
            ("eval.stride".to_owned(), "3".to_owned()),
        ];
        let c = RunConfig::parse(MINIMAL, &o).unwrap();
        assert_eq!(c.steps, 9);
        assert_eq!(c.eval.stride, 3);
        assert_eq!(c.env.threshold, Some(ThresholdSetting::Rule(RuleName::Active)));
        let c = RunConfig::parse(MINIMAL, &[("env.threshold".into(), "4.5".into())]).unwrap();
        assert_eq!(c.env.threshold, Some(ThresholdSetting::Fixed(4.5)));
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        assert!(matches!(RunConfig::parse(&format!("{MINIMAL}\nbogus = 1\n"), &[]), Err(ConfigError::Invalid(_))));
        let c = RunConfig::parse(MINIMAL, &[("delta".into(), "1.5".into())]);
        assert!(matches!(c, Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn config_survives_json_echo() {
        let c = RunConfig::parse(MINIMAL, &[("env.threshold".into(), "2.0".into())]).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        let back: RunConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse(&toml::to_string(&c).unwrap(), &[]).unwrap(), c);
    }
}
