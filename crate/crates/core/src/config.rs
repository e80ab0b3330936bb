//! Environment configuration: the six difficulty axes plus horizon and seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_N_STATE: usize = 8;
pub const DEFAULT_N_ACTION: usize = 4;
pub const DEFAULT_REWARD_INTERVAL: usize = 1;
pub const DEFAULT_MIN_REWARD: f64 = 0.0;
pub const DEFAULT_SURVIVAL_DIFFICULTY: f64 = 0.0;
pub const DEFAULT_POLICY_COMPLEXITY: usize = 1;
pub const DEFAULT_HORIZON: usize = 100;

/// A validated environment configuration.
///
/// Construct through [`RawConfig::validate`] or [`EnvConfig::with_seed`];
/// the fields are public for reading but every constructor enforces the
/// range invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_state: usize,
    pub n_action: usize,
    pub reward_interval: usize,
    pub min_reward: f64,
    pub survival_difficulty: f64,
    pub policy_complexity: usize,
    pub horizon: usize,
    pub master_seed: u64,
}

/// Candidate configuration; unspecified fields take the defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub n_state: Option<usize>,
    pub n_action: Option<usize>,
    pub reward_interval: Option<usize>,
    pub min_reward: Option<f64>,
    pub survival_difficulty: Option<f64>,
    pub policy_complexity: Option<usize>,
    pub horizon: Option<usize>,
    pub master_seed: Option<u64>,
}

fn positive(field: &'static str, value: usize) -> Result<usize> {
    if value >= 1 {
        Ok(value)
    } else {
        Err(Error::InvalidConfig {
            field,
            message: format!("{field} must be ≥ 1"),
        })
    }
}

fn unit_fraction(field: &'static str, value: f64) -> Result<f64> {
    if (0.0..1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidConfig {
            field,
            message: format!("{field} must lie in [0,1)"),
        })
    }
}

impl RawConfig {
    pub fn validate(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            n_state: positive("n_state", self.n_state.unwrap_or(DEFAULT_N_STATE))?,
            n_action: positive("n_action", self.n_action.unwrap_or(DEFAULT_N_ACTION))?,
            reward_interval: positive(
                "reward_interval",
                self.reward_interval.unwrap_or(DEFAULT_REWARD_INTERVAL),
            )?,
            min_reward: unit_fraction("min_reward", self.min_reward.unwrap_or(DEFAULT_MIN_REWARD))?,
            survival_difficulty: unit_fraction(
                "survival_difficulty",
                self.survival_difficulty
                    .unwrap_or(DEFAULT_SURVIVAL_DIFFICULTY),
            )?,
            policy_complexity: positive(
                "policy_complexity",
                self.policy_complexity.unwrap_or(DEFAULT_POLICY_COMPLEXITY),
            )?,
            horizon: positive("horizon", self.horizon.unwrap_or(DEFAULT_HORIZON))?,
            master_seed: self.master_seed.unwrap_or(0),
        })
    }
}

impl From<EnvConfig> for RawConfig {
    fn from(cfg: EnvConfig) -> Self {
        Self {
            n_state: Some(cfg.n_state),
            n_action: Some(cfg.n_action),
            reward_interval: Some(cfg.reward_interval),
            min_reward: Some(cfg.min_reward),
            survival_difficulty: Some(cfg.survival_difficulty),
            policy_complexity: Some(cfg.policy_complexity),
            horizon: Some(cfg.horizon),
            master_seed: Some(cfg.master_seed),
        }
    }
}

/// Versioned JSON representation of a configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDocument {
    format_version: u32,
    #[serde(flatten)]
    config: EnvConfig,
}

impl EnvConfig {
    /// Default configuration with the given master seed.
    pub fn with_seed(master_seed: u64) -> Self {
        RawConfig {
            master_seed: Some(master_seed),
            ..RawConfig::default()
        }
        .validate()
        .expect("defaults are valid")
    }

    /// Re-run validation, e.g. after mutating a field directly.
    pub fn validated(self) -> Result<Self> {
        RawConfig::from(self).validate()
    }

    /// Observation length: the raw state plus `t/T` and `r_cum/k`.
    pub fn observation_dim(&self) -> usize {
        self.n_state + 2
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ConfigDocument {
            format_version: CONFIG_FORMAT_VERSION,
            config: *self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Manifest("missing format_version".into()))?;
        if found != u64::from(CONFIG_FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: CONFIG_FORMAT_VERSION,
                found: found as u32,
            });
        }
        let doc: ConfigDocument = serde_json::from_value(value)?;
        doc.config.validated()
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}
