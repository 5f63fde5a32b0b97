//! Offline dataset: planner-driven runs with noise-perturbed segments.

use super::env::{Controller, EnvOptions, NavEnv, Observation, Transition};
use super::scenario::SceneAssets;
use crate::error::{Error, Result};
use crate::geometry::Twist;
use crate::objective::{ActionSeq, HORIZON};
use crate::planner::Planner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_steps: usize,
    /// Probability that a segment follows the planner unperturbed.
    pub expert_fraction: f64,
    pub noise_v: f64,
    pub noise_omega: f64,
    pub segment_min: usize,
    pub segment_max: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_steps: 6000,
            expert_fraction: 0.6,
            noise_v: 0.15,
            noise_omega: 0.6,
            segment_min: 3,
            segment_max: 15,
        }
    }
}

/// Planner with occasional Gaussian perturbation segments.
pub struct NoisyPlanner {
    planner: Planner,
    cfg: DatasetConfig,
    rng: ChaCha8Rng,
    remaining: usize,
    noisy: bool,
}

impl NoisyPlanner {
    pub fn new(cfg: DatasetConfig, seed: u64) -> Self {
        Self {
            planner: Planner::default(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            remaining: 0,
            noisy: false,
        }
    }
}

impl Controller for NoisyPlanner {
    fn act(&mut self, obs: &Observation) -> ActionSeq {
        if self.remaining == 0 {
            self.noisy = self.rng.random::<f64>() >= self.cfg.expert_fraction;
            let hi = self.cfg.segment_max.max(self.cfg.segment_min);
            self.remaining = self.rng.random_range(self.cfg.segment_min.max(1)..=hi.max(1));
        }
        self.remaining -= 1;
        let u = self.planner.select_action(&obs.planner_view()).twist;
        let u = if self.noisy {
            let nv = Normal::new(0.0, self.cfg.noise_v.max(1e-12)).expect("sigma");
            let nw = Normal::new(0.0, self.cfg.noise_omega.max(1e-12)).expect("sigma");
            Twist::new(u.v + nv.sample(&mut self.rng), u.omega + nw.sample(&mut self.rng)).clamped()
        } else {
            u
        };
        ActionSeq::constant(u, HORIZON)
    }
}

pub fn generate_offline_dataset(
    assets: &SceneAssets,
    cfg: &DatasetConfig,
    options: EnvOptions,
    seed: u64,
) -> Vec<Transition> {
    let mut env = NavEnv::new(assets.clone(), options, seed);
    let mut ctrl = NoisyPlanner::new(*cfg, seed.wrapping_add(0x5eed));
    (0..cfg.n_steps)
        .map(|_| {
            let tau = ctrl.act(env.observation());
            env.step(&tau).transition
        })
        .collect()
}

/// One JSON record per line.
pub fn save_dataset(path: &Path, data: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in data {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Transition>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
