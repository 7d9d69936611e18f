//! Run configuration: a sectioned `key = value` file (TOML syntax).
//!
//! Every section and key is optional; missing ones take their defaults.
//! Unknown sections or keys are rejected.
//!
//! ```toml
//! [scenario]
//! p_max = 1.0
//! noise_power = 1e-9
//!
//! [training]
//! episodes = 2000
//!
//! [run]
//! algorithms = ["moe_gdm", "gdm", "ddpg"]
//! seeds = [1, 2, 3]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ScenarioConfig;
use crate::env::EnvConfig;
use crate::oracle::{DEFAULT_BUDGET, DEFAULT_RESOLUTION};
use crate::policy::Algorithm;
use crate::trainer::{DiffusionConfig, MoeConfig, Setup, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub resolution: usize,
    pub budget: u64,
    /// Seed of the action stream used by policy-gap rollouts.
    pub rollout_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { resolution: DEFAULT_RESOLUTION, budget: DEFAULT_BUDGET, rollout_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.iter().map(|a| a.name().to_string()).collect(),
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs"),
            workers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub training: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub moe: MoeConfig,
    pub oracle: OracleConfig,
    pub run: RunSection,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn setup(&self) -> Setup {
        Setup {
            scenario: self.scenario.clone(),
            env: self.env.clone(),
            train: self.training.clone(),
            diffusion: self.diffusion.clone(),
            moe: self.moe.clone(),
        }
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, ConfigError> {
        self.run
            .algorithms
            .iter()
            .map(|a| a.parse().map_err(|e: crate::policy::UnknownAlgorithm| invalid("algorithms", e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.setup().validate().map_err(|e| match e {
            TrainError::Config(c) => invalid(c.key, c.reason),
            TrainError::Channel(crate::channel::ChannelError::InvalidScenario { key, reason }) => invalid(key, reason),
            other => invalid("scenario", other.to_string()),
        })?;
        if self.oracle.resolution < 2 {
            return Err(invalid("resolution", "must be at least 2"));
        }
        if self.oracle.budget == 0 {
            return Err(invalid("budget", "must be positive"));
        }
        if self.run.algorithms.is_empty() {
            return Err(invalid("algorithms", "must list at least one algorithm"));
        }
        self.algorithms()?;
        if self.run.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        if self.run.workers == 0 {
            return Err(invalid("workers", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.episodes, 2000);
        assert_eq!(cfg.scenario.noise_power, 1e-9);
        assert_eq!(cfg.run.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn negative_p_max_names_the_key() {
        let err = RunConfig::from_toml("[scenario]\np_max = -1.0\n").unwrap_err().to_string();
        assert!(err.contains("p_max"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[training]\nepisodez = 3\n").unwrap_err().to_string();
        assert!(err.contains("episodez"), "{err}");
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn dump_and_reload_is_identity() {
        let mut cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        cfg.moe.fixed_expert = Some(2);
        cfg.training.lr_actor = 3.0e-5;
        cfg.scenario.noise_power = 1.0 / 3.0 * 1e-9;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_algorithm_and_section_invariants() {
        let err = RunConfig::from_toml("[run]\nalgorithms = [\"sac\"]\n").unwrap_err().to_string();
        assert!(err.contains("sac"), "{err}");
        let err = RunConfig::from_toml("[training]\ngamma = 1.5\n").unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
    }
}
