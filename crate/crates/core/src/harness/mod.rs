//! Rewards, metrics, experiment configuration and orchestration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod reward;

pub use config::ExperimentConfig;
pub use experiment::{
    collect_offline, evaluate_actor, load_assets, prepare_agent, pretrain_from, read_laps_csv, run_experiment,
    run_seed, window_mean, write_csv, write_summary, ExperimentResult, MeanStd, OfflineAssets, OfflineCache,
    RunPaths, SeedRun, SnapshotController, Summary,
};
pub use metrics::{accumulate_metrics, LapRecord, StepRecord};
pub use reward::{compute_reward, RewardConstants};
