//! Offline phases: amortized objective ascent and TD3+BC.

use super::agent::{Agent, AgentConfig, TrainLogRow};
use super::replay::ReplayBuffer;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::objective::ObjectiveWeights;
use crate::sim::Transition;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 76,
            lr: 1e-3,
        }
    }
}

/// Trains a sequence actor to maximize `J(s, pi(s))` over the dataset states.
pub fn pretrain_offline(
    data: &[Transition],
    base: &AgentConfig,
    weights: ObjectiveWeights,
    pc: &PretrainConfig,
    seed: u64,
) -> Result<Mlp> {
    let cfg = AgentConfig {
        use_j: true,
        use_critic: false,
        residual: false,
        weights,
        actor_lr: pc.lr,
        ..*base
    };
    let mut agent = Agent::new(cfg, seed)?;
    if pc.epochs == 0 {
        return Ok(agent.actor);
    }
    if data.is_empty() {
        return Err(Error::Config("offline pretraining needs a non-empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..pc.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(pc.batch_size.max(1)) {
            let rows: Vec<&Transition> = chunk.iter().map(|&i| &data[i]).collect();
            let b = agent.batch(&rows)?;
            agent
                .actor_update(&b)
                .map_err(|e| Error::Diverged(format!("pretraining epoch {epoch}: {e}")))?;
        }
    }
    Ok(agent.actor)
}

/// Offline TD3+BC over the offline partition; leaves the agent with BC switched off.
pub fn pretrain_td3bc(
    agent: &mut Agent,
    replay: &ReplayBuffer,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TrainLogRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bc0_0bc0);
    agent.bc = true;
    let mut log = Vec::with_capacity(steps);
    for _ in 0..steps {
        let rows = replay.sample_offline(batch_size, &mut rng);
        if rows.is_empty() {
            break;
        }
        let b = agent.batch(&rows)?;
        match agent.train_step(&b) {
            Ok(r) => log.push(r),
            Err(e) => {
                agent.bc = false;
                return Err(e);
            }
        }
    }
    agent.bc = false;
    Ok(log)
}
