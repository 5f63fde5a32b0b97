//! Experiment orchestration: offline phases, the interleaved online loop and persistence.

use super::config::ExperimentConfig;
use super::metrics::{accumulate_metrics, LapRecord};
use crate::error::{Error, Result};
use crate::localization::MarkerEvent;
use crate::nn::Mlp;
use crate::objective::{ActionSeq, ObjectiveWeights};
use crate::rl::{
    pretrain_offline, pretrain_td3bc, Agent, AgentConfig, BasePolicy, Method, PolicySnapshot, ReplayBuffer,
    TrainLogRow,
};
use crate::sim::{
    generate_offline_dataset, load_dataset, save_dataset, Controller, NavEnv, Observation, PlannerController,
    Scenario, SceneAssets, Transition,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const EXPLORE_STREAM: u64 = 0xe8_0001;
const SAMPLE_STREAM: u64 = 0x5a_0002;
const PRETRAIN_STREAM: u64 = 0x9e_0003;
const POSE_STREAM: u64 = 0x9e_0004;

/// Offline data and pretrained actors for one seed, built on demand.
#[derive(Clone, Debug, Default)]
pub struct OfflineAssets {
    pub dataset: Option<Vec<Transition>>,
    /// Actor pretrained on the full objective.
    pub model_based: Option<Mlp>,
    /// Actor pretrained on the pose term only (base of the residual baseline).
    pub pose_only: Option<Mlp>,
}

impl OfflineAssets {
    pub fn dataset(&mut self, cfg: &ExperimentConfig, assets: &SceneAssets, seed: u64) -> &[Transition] {
        self.dataset
            .get_or_insert_with(|| generate_offline_dataset(assets, &cfg.dataset, cfg.env, seed))
    }

    pub fn model_based(&mut self, cfg: &ExperimentConfig, assets: &SceneAssets, seed: u64) -> Result<Mlp> {
        if self.model_based.is_none() {
            let w = cfg.agent.weights;
            let a = pretrain_offline(self.dataset(cfg, assets, seed), &cfg.agent, w, &cfg.pretrain, seed ^ PRETRAIN_STREAM)?;
            self.model_based = Some(a);
        }
        Ok(self.model_based.clone().expect("set above"))
    }

    pub fn pose_only(&mut self, cfg: &ExperimentConfig, assets: &SceneAssets, seed: u64) -> Result<Mlp> {
        if self.pose_only.is_none() {
            let w = ObjectiveWeights::pose_only().with_scale(cfg.agent.weights.scale);
            let a = pretrain_offline(self.dataset(cfg, assets, seed), &cfg.agent, w, &cfg.pretrain, seed ^ POSE_STREAM)?;
            self.pose_only = Some(a);
        }
        Ok(self.pose_only.clone().expect("set above"))
    }
}

/// Offline assets keyed by seed and by the configuration they depend on.
#[derive(Clone, Debug, Default)]
pub struct OfflineCache {
    entries: BTreeMap<(u64, String), OfflineAssets>,
}

impl OfflineCache {
    pub fn entry(&mut self, cfg: &ExperimentConfig, seed: u64) -> &mut OfflineAssets {
        let key = serde_json::to_string(&(&cfg.scenario, &cfg.dataset, &cfg.pretrain, &cfg.env, &cfg.agent))
            .expect("config serializes");
        self.entries.entry((seed, key)).or_default()
    }
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub laps: Vec<LapRecord>,
    #[serde(skip)]
    pub train_log: Vec<TrainLogRow>,
    pub trainer_steps: u64,
    pub env_steps: u64,
    pub sim_time: f64,
    #[serde(skip)]
    pub marker_events: Vec<MarkerEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub runs: Vec<SeedRun>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Configuration echo plus aggregate lap metrics over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub laps: usize,
    pub metrics: BTreeMap<String, MeanStd>,
    /// Mean interventions per lap index across seeds.
    pub interventions_by_lap: Vec<f64>,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn summary(&self, cfg: &ExperimentConfig) -> Summary {
        let all: Vec<&LapRecord> = self.runs.iter().flat_map(|r| &r.laps).collect();
        let col = |f: fn(&LapRecord) -> f64| MeanStd::of(&all.iter().map(|l| f(l)).collect::<Vec<_>>());
        let mut metrics = BTreeMap::new();
        metrics.insert("idv".into(), col(|l| l.idv));
        metrics.insert("nco".into(), col(|l| l.nco));
        metrics.insert("ufs".into(), col(|l| l.ufs));
        metrics.insert("cp".into(), col(|l| l.cp as f64));
        metrics.insert("co".into(), col(|l| l.co as f64));
        metrics.insert("interventions".into(), col(|l| l.interventions as f64));
        metrics.insert("spl".into(), col(|l| l.spl));
        metrics.insert("stl".into(), col(|l| l.stl));
        metrics.insert("reward".into(), col(|l| l.reward));
        let laps = self.runs.iter().map(|r| r.laps.len()).max().unwrap_or(0);
        let interventions_by_lap = (0..laps)
            .map(|i| {
                let xs: Vec<f64> = self
                    .runs
                    .iter()
                    .filter_map(|r| r.laps.get(i))
                    .map(|l| l.interventions as f64)
                    .collect();
                MeanStd::of(&xs).mean
            })
            .collect();
        Summary {
            config: cfg.clone(),
            laps,
            metrics,
            interventions_by_lap,
            runs: self.runs.clone(),
        }
    }
}

/// Mean of `f` over laps `[from, to)` of one run (lap indices are zero-based).
pub fn window_mean(laps: &[LapRecord], from: usize, to: usize, f: impl Fn(&LapRecord) -> f64) -> f64 {
    let xs: Vec<f64> = laps.iter().filter(|l| l.lap >= from && l.lap < to).map(f).collect();
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn load_assets(cfg: &ExperimentConfig) -> Result<SceneAssets> {
    Scenario::resolve(&cfg.scenario, cfg.base_dir.as_deref())?.build()
}

/// File locations under an output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path, method: Method) -> Self {
        Self { root: out.join(method.id()) }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed{seed}"))
    }

    pub fn laps_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("laps.csv")
    }

    pub fn train_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("train_log.csv")
    }

    pub fn checkpoints(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("checkpoints")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_laps_csv(path: &Path) -> Result<Vec<LapRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

fn write_seed(paths: &RunPaths, run: &SeedRun) -> Result<()> {
    write_csv(&paths.laps_csv(run.seed), &run.laps)?;
    write_csv(&paths.train_csv(run.seed), &run.train_log)?;
    Ok(())
}

/// Agent for a learning method after its offline phase.
pub fn prepare_agent(
    cfg: &ExperimentConfig,
    assets: &SceneAssets,
    offline: &mut OfflineAssets,
    seed: u64,
) -> Result<(Agent, ReplayBuffer)> {
    let method = cfg.method;
    let acfg: AgentConfig = method.agent_config(&cfg.agent);
    let mut agent = Agent::new(acfg, seed)?;
    match method {
        Method::Ours | Method::SacsonFt => agent.set_actor(offline.model_based(cfg, assets, seed)?)?,
        Method::Residual => agent.set_base(BasePolicy::Actor(offline.pose_only(cfg, assets, seed)?)),
        Method::ResidualDagger => agent.set_base(BasePolicy::Actor(offline.model_based(cfg, assets, seed)?)),
        Method::Td3BcTd3 | Method::FastRlap | Method::Planner => {}
    }
    let data = if method.mixes_offline_data() {
        offline.dataset(cfg, assets, seed).to_vec()
    } else {
        Vec::new()
    };
    let replay = ReplayBuffer::new(data, cfg.replay_capacity);
    if method == Method::Td3BcTd3 && cfg.td3bc_steps > 0 {
        pretrain_td3bc(&mut agent, &replay, cfg.td3bc_steps, cfg.batch_size, seed)?;
        agent.trainer_steps = 0;
    }
    Ok((agent, replay))
}

/// Deterministic controller around a fixed policy snapshot.
pub struct SnapshotController {
    pub policy: PolicySnapshot,
    pub explore: bool,
    rng: ChaCha8Rng,
    pub error: Option<Error>,
}

impl SnapshotController {
    pub fn new(policy: PolicySnapshot, explore: bool, seed: u64) -> Self {
        Self {
            policy,
            explore,
            rng: ChaCha8Rng::seed_from_u64(seed ^ EXPLORE_STREAM),
            error: None,
        }
    }
}

impl Controller for SnapshotController {
    fn act(&mut self, obs: &Observation) -> ActionSeq {
        match self.policy.act(&obs.features.0, self.explore, &mut self.rng) {
            Ok(t) => t,
            Err(e) => {
                self.error.get_or_insert(e);
                ActionSeq::zeros(1)
            }
        }
    }
}

fn finish_partial(env: &NavEnv, laps: &mut Vec<LapRecord>, trainer_steps: u64) {
    if !env.lap_trace().is_empty() {
        let mut rec = accumulate_metrics(env.lap(), env.lap_trace(), env.assets.course.length(), false);
        rec.trainer_steps = trainer_steps;
        laps.push(rec);
    }
}

/// Runs one seed. The result is returned even when training diverges so that partial logs can be written.
pub fn run_seed(
    cfg: &ExperimentConfig,
    assets: &SceneAssets,
    offline: &mut OfflineAssets,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> (SeedRun, Option<Error>) {
    let mut run = SeedRun {
        seed,
        laps: Vec::new(),
        train_log: Vec::new(),
        trainer_steps: 0,
        env_steps: 0,
        sim_time: 0.0,
        marker_events: Vec::new(),
    };
    let mut env_opts = cfg.env;
    env_opts.record_next_context |= cfg.agent.exact_td_target;
    let mut env = NavEnv::new(assets.clone(), env_opts, seed);

    if !cfg.method.is_learning() {
        let mut ctrl = PlannerController::new();
        drive(&mut env, &mut run, cfg, |env| {
            let tau = ctrl.act(env.observation());
            Ok(tau)
        });
        run.marker_events = env.localizer.events.clone();
        return (run, None);
    }

    let (mut agent, mut replay) = match prepare_agent(cfg, assets, offline, seed) {
        Ok(x) => x,
        Err(e) => return (run, Some(e)),
    };
    let mut policy = SnapshotController::new(agent.sync_policy(), cfg.explore, seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_STREAM);
    let mut failure = None;
    let mut laps = Vec::new();
    while laps.len() < cfg.laps && env.time() < cfg.max_sim_time {
        let tau = policy.act(env.observation());
        if let Some(e) = policy.error.take() {
            failure = Some(e);
            break;
        }
        let out = env.step(&tau);
        replay.push(out.transition);
        if replay.online_len() >= cfg.warmup {
            for _ in 0..cfg.k_ratio {
                if agent.trainer_steps >= cfg.max_trainer_steps {
                    break;
                }
                let rows = replay.sample(cfg.batch_size, &mut sample_rng);
                let step = agent.batch(&rows).and_then(|b| agent.train_step(&b));
                match step {
                    Ok(row) => run.train_log.push(row),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
                let n = agent.trainer_steps;
                if n % cfg.sync_period == 0 {
                    policy.policy = agent.sync_policy();
                }
                if let Some(dir) = checkpoint_dir {
                    if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
                        if let Err(e) = agent.save_checkpoint(dir, &format!("step{n}")) {
                            failure = Some(e);
                            break;
                        }
                    }
                }
            }
        }
        if let Some(mut l) = out.lap {
            l.trainer_steps = agent.trainer_steps;
            laps.push(l);
        }
        if failure.is_some() {
            break;
        }
    }
    if laps.len() < cfg.laps {
        finish_partial(&env, &mut laps, agent.trainer_steps);
    }
    if failure.is_none() {
        if let Some(dir) = checkpoint_dir {
            if let Err(e) = agent.save_checkpoint(dir, "final") {
                failure = Some(e);
            }
        }
    }
    run.laps = laps;
    run.trainer_steps = agent.trainer_steps;
    run.env_steps = env.steps();
    run.sim_time = env.time();
    run.marker_events = env.localizer.events.clone();
    (run, failure)
}

/// Runs `act` in the environment under the lap and time limits.
fn drive(env: &mut NavEnv, run: &mut SeedRun, cfg: &ExperimentConfig, mut act: impl FnMut(&NavEnv) -> Result<ActionSeq>) {
    let mut laps = Vec::new();
    while laps.len() < cfg.laps && env.time() < cfg.max_sim_time {
        let Ok(tau) = act(env) else { break };
        if let Some(l) = env.step(&tau).lap {
            laps.push(l);
        }
    }
    if laps.len() < cfg.laps {
        finish_partial(env, &mut laps, 0);
    }
    run.laps = laps;
    run.env_steps = env.steps();
    run.sim_time = env.time();
}

/// Fixed-policy evaluation of a learned actor (no training, no exploration).
pub fn evaluate_actor(
    cfg: &ExperimentConfig,
    assets: &SceneAssets,
    actor: Mlp,
    base: Option<BasePolicy>,
    seed: u64,
) -> Result<SeedRun> {
    let snapshot = PolicySnapshot {
        actor,
        base,
        explore_sigma: 0.0,
        version: 0,
    };
    let mut ctrl = SnapshotController::new(snapshot, false, seed);
    let mut env = NavEnv::new(assets.clone(), cfg.env, seed);
    let mut run = SeedRun {
        seed,
        laps: vec![],
        train_log: vec![],
        trainer_steps: 0,
        env_steps: 0,
        sim_time: 0.0,
        marker_events: vec![],
    };
    drive(&mut env, &mut run, cfg, |env| {
        let tau = ctrl.act(env.observation());
        match ctrl.error.take() {
            Some(e) => Err(e),
            None => Ok(tau),
        }
    });
    run.marker_events = env.localizer.events.clone();
    Ok(run)
}

/// Full experiment over all seeds. With `out`, writes per-seed lap and training CSVs,
/// checkpoints and a summary file; on divergence the partial logs are written before returning the error.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, cache: &mut OfflineCache) -> Result<ExperimentResult> {
    cfg.validate()?;
    let assets = load_assets(cfg)?;
    let paths = out.map(|o| RunPaths::new(o, cfg.method));
    let mut result = ExperimentResult {
        method: cfg.method,
        runs: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let ck = paths.as_ref().map(|p| p.checkpoints(seed));
        let (run, err) = run_seed(cfg, &assets, cache.entry(cfg, seed), seed, ck.as_deref());
        if let Some(p) = &paths {
            write_seed(p, &run)?;
        }
        result.runs.push(run);
        if let Some(e) = err {
            if let Some(p) = &paths {
                write_summary(&p.summary(), &result.summary(cfg))?;
            }
            return Err(e);
        }
    }
    if let Some(p) = &paths {
        write_summary(&p.summary(), &result.summary(cfg))?;
    }
    Ok(result)
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(s)?)?;
    Ok(())
}

/// Collects the offline dataset for one seed and writes it as JSON lines.
pub fn collect_offline(cfg: &ExperimentConfig, seed: u64, path: &Path) -> Result<usize> {
    let assets = load_assets(cfg)?;
    let data = generate_offline_dataset(&assets, &cfg.dataset, cfg.env, seed);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_dataset(path, &data)?;
    Ok(data.len())
}

/// Pretrains the model-based actor, from a saved dataset when given.
pub fn pretrain_from(cfg: &ExperimentConfig, seed: u64, dataset: Option<&Path>) -> Result<Mlp> {
    let data = match dataset {
        Some(p) => load_dataset(p)?,
        None => generate_offline_dataset(&load_assets(cfg)?, &cfg.dataset, cfg.env, seed),
    };
    pretrain_offline(&data, &cfg.agent, cfg.agent.weights, &cfg.pretrain, seed ^ PRETRAIN_STREAM)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            laps: 2,
            max_sim_time: 400.0,
            max_trainer_steps: 120,
            td3bc_steps: 20,
            dataset: crate::sim::DatasetConfig {
                n_steps: 200,
                ..Default::default()
            },
            pretrain: crate::rl::PretrainConfig {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn planner_runs_without_training() {
        let r = run_experiment(&small(Method::Planner), None, &mut OfflineCache::default()).unwrap();
        assert_eq!(r.runs[0].trainer_steps, 0);
        assert!(r.runs[0].train_log.is_empty());
        assert!(r.runs[0].laps.iter().all(|l| l.trainer_steps == 0));
    }

    #[test]
    fn every_method_runs_and_respects_budget() {
        let mut cache = OfflineCache::default();
        for m in Method::ALL {
            let cfg = small(m);
            let r = run_experiment(&cfg, None, &mut cache).unwrap();
            let run = &r.runs[0];
            assert!(run.trainer_steps <= cfg.max_trainer_steps, "{m}");
            assert!(!run.laps.is_empty(), "{m}");
            if m.is_learning() {
                assert_eq!(run.train_log.len() as u64, run.trainer_steps);
            }
        }
    }

    #[test]
    fn outputs_are_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Method::Ours);
        run_experiment(&cfg, Some(dir.path()), &mut OfflineCache::default()).unwrap();
        let p = RunPaths::new(dir.path(), Method::Ours);
        let a = std::fs::read(p.laps_csv(0)).unwrap();
        let laps = read_laps_csv(&p.laps_csv(0)).unwrap();
        assert!(!laps.is_empty());
        assert!(p.train_csv(0).exists());
        assert!(p.summary().exists());
        assert!(p.checkpoints(0).join("actor_final.json").exists());
        let dir2 = tempfile::tempdir().unwrap();
        run_experiment(&cfg, Some(dir2.path()), &mut OfflineCache::default()).unwrap();
        let b = std::fs::read(RunPaths::new(dir2.path(), Method::Ours).laps_csv(0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_aborts_with_partial_logs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Method::FastRlap);
        cfg.agent.critic_lr = 1e300;
        cfg.agent.actor_lr = 1e300;
        let err = run_experiment(&cfg, Some(dir.path()), &mut OfflineCache::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)), "{err}");
        let p = RunPaths::new(dir.path(), Method::FastRlap);
        assert!(p.laps_csv(0).exists());
        assert!(p.summary().exists());
    }

    #[test]
    fn invalid_scenario_is_a_config_error() {
        let cfg = ExperimentConfig {
            scenario: "builtin:nowhere".into(),
            ..small(Method::Planner)
        };
        assert!(run_experiment(&cfg, None, &mut OfflineCache::default()).unwrap_err().is_config());
    }

    #[test]
    fn window_mean_uses_lap_indices() {
        let laps: Vec<LapRecord> = (0..5)
            .map(|i| LapRecord {
                lap: i,
                interventions: i as u32,
                ..Default::default()
            })
            .collect();
        assert_eq!(window_mean(&laps, 1, 3, |l| l.interventions as f64), 1.5);
        assert!(window_mean(&laps, 7, 9, |l| l.idv).is_nan());
    }
}
