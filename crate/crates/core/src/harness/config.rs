//! Experiment configuration (TOML).

use crate::error::{Error, Result};
use crate::rl::{AgentConfig, Method, PretrainConfig};
use crate::sim::{DatasetConfig, EnvOptions};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario file path or `builtin:<name>`.
    pub scenario: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub laps: usize,
    /// Simulated-time cap in seconds.
    pub max_sim_time: f64,
    pub max_trainer_steps: u64,
    /// Trainer steps per environment step.
    pub k_ratio: u32,
    pub sync_period: u64,
    pub batch_size: usize,
    /// Online transitions required before training starts.
    pub warmup: usize,
    pub replay_capacity: usize,
    pub checkpoint_every: u64,
    /// Offline TD3+BC steps for the td3bc_td3 baseline.
    pub td3bc_steps: usize,
    /// Exploration noise on the executed action during online learning.
    pub explore: bool,
    pub agent: AgentConfig,
    pub dataset: DatasetConfig,
    pub pretrain: PretrainConfig,
    pub env: EnvOptions,
    /// Directory the scenario path is resolved against; set by `load`.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "builtin:course1".into(),
            method: Method::Ours,
            seeds: vec![0],
            laps: 15,
            max_sim_time: 7200.0,
            max_trainer_steps: 6000,
            k_ratio: 4,
            sync_period: 50,
            batch_size: 76,
            warmup: 38,
            replay_capacity: 50_000,
            checkpoint_every: 1000,
            td3bc_steps: 2000,
            explore: true,
            agent: AgentConfig::default(),
            dataset: DatasetConfig::default(),
            pretrain: PretrainConfig::default(),
            env: EnvOptions::default(),
            base_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::from_toml_str(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.laps == 0 {
            return bad("laps must be positive");
        }
        if self.max_sim_time.is_nan() || self.max_sim_time <= 0.0 {
            return bad("max_sim_time must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.sync_period == 0 {
            return bad("sync_period must be positive");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be positive");
        }
        if !(0.0..1.0).contains(&self.agent.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        self.method.agent_config(&self.agent).validate()
    }
}
