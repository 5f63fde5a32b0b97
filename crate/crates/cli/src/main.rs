use clap::{Args, Parser, Subcommand};
use selfi_core::error::Error;
use selfi_core::harness::{
    collect_offline, evaluate_actor, load_assets, prepare_agent, pretrain_from, run_experiment, write_csv,
    ExperimentConfig, OfflineAssets, OfflineCache, RunPaths,
};
use selfi_core::nn::Mlp;
use selfi_core::planner::PRIMITIVE_TWISTS;
use selfi_core::rl::{BasePolicy, Method};
use selfi_core::sim::{NavEnv, PlannerController, Scenario};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "selfi", version, about = "Hybrid model-based / model-free navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Method id; overrides the configuration.
    #[arg(long)]
    method: Option<String>,
    /// Lap limit; overrides the configuration.
    #[arg(long)]
    laps: Option<usize>,
    /// Single-threaded interleaved execution (the only mode; accepted for scripts).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain the model-based actor on the offline dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Offline dataset (JSON lines); collected on the fly when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Collect the scripted offline dataset.
    CollectOffline {
        #[command(flatten)]
        common: Common,
    },
    /// Offline phase followed by online learning; writes lap metrics, logs and checkpoints.
    TrainOnline {
        #[command(flatten)]
        common: Common,
    },
    /// Run a fixed policy (no learning, no exploration) and write its lap metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Actor checkpoint; the method's offline policy is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the sampling planner's primitive costs for a scenario.
    PlanDemo {
        /// Scenario file or `builtin:<name>`.
        #[arg(long, default_value = "builtin:course1")]
        scenario: String,
        /// Planner steps to simulate.
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(m) = &c.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(l) = c.laps {
        cfg.laps = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::CollectOffline { common } => {
            let cfg = load_config(&common)?;
            for &seed in &cfg.seeds {
                let path = common.out.join(format!("offline_seed{seed}.jsonl"));
                let n = collect_offline(&cfg, seed, &path)?;
                println!("wrote {n} transitions to {}", path.display());
            }
        }
        Command::Pretrain { common, dataset } => {
            let cfg = load_config(&common)?;
            for &seed in &cfg.seeds {
                let actor = pretrain_from(&cfg, seed, dataset.as_deref())?;
                std::fs::create_dir_all(&common.out)?;
                let path = common.out.join(format!("pretrained_seed{seed}.json"));
                actor.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::TrainOnline { common } => {
            let cfg = load_config(&common)?;
            let result = run_experiment(&cfg, Some(&common.out), &mut OfflineCache::default())?;
            let paths = RunPaths::new(&common.out, cfg.method);
            for r in &result.runs {
                let int: u32 = r.laps.iter().map(|l| l.interventions).sum();
                println!(
                    "{} seed {}: {} laps, {} interventions, {} trainer steps -> {}",
                    cfg.method,
                    r.seed,
                    r.laps.len(),
                    int,
                    r.trainer_steps,
                    paths.laps_csv(r.seed).display()
                );
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let assets = load_assets(&cfg)?;
            let paths = RunPaths::new(&common.out, cfg.method);
            for &seed in &cfg.seeds {
                let laps = if cfg.method.is_learning() {
                    let (actor, base) = eval_policy(&cfg, &assets, seed, checkpoint.as_deref())?;
                    evaluate_actor(&cfg, &assets, actor, base, seed)?.laps
                } else {
                    let mut env = NavEnv::new(assets.clone(), cfg.env, seed);
                    let max_steps = (cfg.max_sim_time / selfi_core::geometry::DT).ceil() as u64;
                    env.run(&mut PlannerController::new(), cfg.laps, max_steps)
                };
                let path = paths.seed_dir(seed).join("eval_laps.csv");
                write_csv(&path, &laps)?;
                println!("{} seed {seed}: {} laps -> {}", cfg.method, laps.len(), path.display());
            }
        }
        Command::PlanDemo { scenario, steps, seed } => {
            let assets = Scenario::resolve(&scenario, None)?.build()?;
            let mut env = NavEnv::new(assets, Default::default(), seed);
            let mut ctrl = PlannerController::new();
            for k in 0..steps.max(1) {
                use selfi_core::sim::Controller;
                let tau = ctrl.act(env.observation());
                let d = ctrl.last.clone().expect("planner decided");
                let p = env.world.robot;
                println!("step {k} robot ({:.2}, {:.2}, {:.2})", p.x, p.y, p.theta);
                println!("  idx      v      w    goal  obstacle  pedestrian     d_s   d_ped");
                for (j, c) in d.costs.iter().enumerate() {
                    let mark = if j == d.index { '*' } else { ' ' };
                    println!(
                        "{mark} {j:3} {:6.2} {:6.2} {:7.3} {:9.0} {:11.0} {:7.2} {:7.2}",
                        PRIMITIVE_TWISTS[j].v, PRIMITIVE_TWISTS[j].omega, c.goal, c.obstacle, c.pedestrian, c.d_s, c.d_ped
                    );
                }
                println!(
                    "  chosen {} (v {:.2}, w {:.2}){}",
                    d.index,
                    d.twist.v,
                    d.twist.omega,
                    if d.boxed_in { " boxed in" } else { "" }
                );
                env.step(&tau);
            }
        }
    }
    Ok(())
}

fn eval_policy(
    cfg: &ExperimentConfig,
    assets: &selfi_core::sim::SceneAssets,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Mlp, Option<BasePolicy>), Error> {
    let mut offline = OfflineAssets::default();
    let (agent, _) = prepare_agent(cfg, assets, &mut offline, seed)?;
    let actor = match checkpoint {
        Some(p) => Mlp::load(p)?,
        None => agent.actor.clone(),
    };
    Ok((actor, agent.base.clone()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
