//! The method set and how each one configures the learner.

use super::agent::{AgentConfig, BetaSchedule};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    /// Hybrid critic: J + beta * Qbar on a model-based pretrained actor.
    Ours,
    /// Residual TD3 on a goal-only pretrained base policy.
    Residual,
    /// Residual TD3 on the full model-based pretrained base policy.
    ResidualDagger,
    /// Offline TD3+BC followed by online TD3.
    Td3BcTd3,
    /// Online TD3 from scratch over fixed features.
    FastRlap,
    /// Online ascent on J only.
    SacsonFt,
    /// Non-learning primitive planner.
    Planner,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ours,
        Method::Residual,
        Method::ResidualDagger,
        Method::Td3BcTd3,
        Method::FastRlap,
        Method::SacsonFt,
        Method::Planner,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Residual => "residual",
            Method::ResidualDagger => "residual_dagger",
            Method::Td3BcTd3 => "td3bc_td3",
            Method::FastRlap => "fastrlap",
            Method::SacsonFt => "sacson_ft",
            Method::Planner => "planner",
        }
    }

    pub fn is_learning(&self) -> bool {
        *self != Method::Planner
    }

    /// Pretrained on the full objective before online learning.
    pub fn uses_model_based_pretraining(&self) -> bool {
        matches!(self, Method::Ours | Method::SacsonFt | Method::ResidualDagger)
    }

    /// Offline transitions are mixed into online batches.
    pub fn mixes_offline_data(&self) -> bool {
        !matches!(self, Method::FastRlap | Method::Planner)
    }

    /// Learner configuration derived from shared hyperparameters.
    pub fn agent_config(&self, shared: &AgentConfig) -> AgentConfig {
        let mut c = *shared;
        match self {
            Method::Ours => {
                c.use_j = true;
                c.use_critic = true;
            }
            Method::SacsonFt => {
                c.use_j = true;
                c.use_critic = false;
            }
            Method::Residual | Method::ResidualDagger => {
                c.use_j = false;
                c.use_critic = true;
                c.residual = true;
                c.horizon = 1;
                c.beta = BetaSchedule::constant(1.0);
            }
            Method::Td3BcTd3 | Method::FastRlap | Method::Planner => {
                c.use_j = false;
                c.use_critic = true;
                c.residual = false;
                c.horizon = 1;
                c.beta = BetaSchedule::constant(1.0);
            }
        }
        c
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_").replace('†', "_dagger");
        Method::ALL
            .into_iter()
            .find(|m| m.id() == norm)
            .ok_or_else(|| {
                let ids: Vec<&str> = Method::ALL.iter().map(Method::id).collect();
                Error::Config(format!("unknown method `{s}` (expected one of {})", ids.join(", ")))
            })
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.id().to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
