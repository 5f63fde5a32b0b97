use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn selfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfi")).args(args).output().expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let out = selfi(&["eval", "--config", "/nonexistent/selfi.toml", "--method", "planner"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = selfi(&["eval", "--config", "x.toml", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_method_is_a_config_error() {
    let cfg = smoke_config();
    let out = selfi(&["eval", "--config", arg(&cfg), "--method", "dqn"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn planner_eval_writes_requested_laps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = selfi(&["eval", "--config", arg(&cfg), "--method", "planner", "--laps", "5", "--out", arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("planner/seed0/eval_laps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn deterministic_training_repeats_exactly() {
    let cfg = smoke_config();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = selfi(&["train-online", "--deterministic", "--seed", "7", "--config", arg(&cfg), "--out", arg(dir.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let laps = std::fs::read(dir.path().join("ours/seed7/laps.csv")).unwrap();
        let log = std::fs::read(dir.path().join("ours/seed7/train_log.csv")).unwrap();
        assert!(dir.path().join("ours/summary.json").exists());
        (laps, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn offline_collection_and_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = selfi(&["collect-offline", "--config", arg(&cfg), "--out", arg(dir.path())]);
    assert!(out.status.success());
    let data = dir.path().join("offline_seed0.jsonl");
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 150);
    let out = selfi(&["pretrain", "--config", arg(&cfg), "--dataset", arg(&data), "--out", arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let actor = dir.path().join("pretrained_seed0.json");
    assert!(actor.exists());
    let out = selfi(&["eval", "--config", arg(&cfg), "--checkpoint", arg(&actor), "--out", arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ours/seed0/eval_laps.csv").exists());
}

#[test]
fn plan_demo_lists_every_primitive() {
    let out = selfi(&["plan-demo", "--steps", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("chosen").count(), 2);
    assert_eq!(text.lines().filter(|l| l.starts_with('*')).count(), 2);
}

#[test]
fn bad_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = selfi(&["eval", "--config", arg(&cfg), "--checkpoint", "/nonexistent/actor.json", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}
