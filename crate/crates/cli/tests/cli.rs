//! Runs the `fleetsched` binary end to end on small scenarios.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn fleetsched(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fleetsched"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("FLEETSCHED_SEED")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn summary(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.json"))).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generate_writes_agents() {
    let dir = tempfile::tempdir().unwrap();
    fleetsched(dir.path(), &["generate", "--n", "6", "--r", "2", "--tta-runs", "50"]);
    assert_eq!(csv_rows(&dir.path().join("agents.csv")), 6);
    assert!(dir.path().join("agents.json").exists());
    assert_eq!(summary(dir.path(), "generate")["result"]["agents"], 6);
}

#[test]
fn config_file_flags_and_seed_env_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    fs::write(&cfg, "n = 8\nr = 2\nseed = 1\ntta_runs = 50\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let run = |extra: &[&str], seed_env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fleetsched"));
        cmd.args(["generate", "--config", cfg, "--out"]).arg(dir.path()).args(extra);
        cmd.env_remove("FLEETSCHED_SEED");
        if let Some(s) = seed_env {
            cmd.env("FLEETSCHED_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        summary(dir.path(), "generate")["config"].clone()
    };

    let file_only = run(&[], None);
    assert_eq!((file_only["n"].as_u64(), file_only["seed"].as_u64()), (Some(8), Some(1)));
    let env_seed = run(&[], Some("77"));
    assert_eq!(env_seed["seed"].as_u64(), Some(77));
    let flag_seed = run(&["--seed", "5", "--n", "4"], Some("77"));
    assert_eq!((flag_seed["n"].as_u64(), flag_seed["seed"].as_u64()), (Some(4), Some(5)));
}

#[test]
fn partition_and_auction_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--n", "10", "--r", "3", "--tta-runs", "100"];
    fleetsched(dir.path(), &[&["partition"][..], &base].concat());
    assert_eq!(csv_rows(&dir.path().join("groups.csv")), 10);
    assert_eq!(summary(dir.path(), "partition")["result"]["groups"], 3);
    assert!(dir.path().join("partition_spec.json").exists());

    fleetsched(dir.path(), &[&["evaluate", "--method", "auction", "--episodes", "20"][..], &base].concat());
    assert_eq!(csv_rows(&dir.path().join("episodes.csv")), 20);
    let s = summary(dir.path(), "evaluate");
    assert_eq!(s["result"]["budget_violations"], 0);
    assert_eq!(s["result"]["capacity_violations"], 0);
}

#[test]
fn train_then_evaluate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--n", "6", "--r", "2", "--tta-runs", "50", "--meta-iterations", "2", "--finetune-steps", "1"];
    fleetsched(dir.path(), &[&["train"][..], &base].concat());
    assert_eq!(csv_rows(&dir.path().join("training.csv")), 2);
    let ckpt = dir.path().join("meta.json");
    assert!(ckpt.exists());
    fleetsched(
        dir.path(),
        &[&["evaluate", "--episodes", "5", "--checkpoint", ckpt.to_str().unwrap()][..], &base].concat(),
    );
    assert_eq!(summary(dir.path(), "evaluate")["result"]["method"], "lsap_meta_ppo");
}

#[test]
fn sweep_and_concentration_tables() {
    let dir = tempfile::tempdir().unwrap();
    fleetsched(
        dir.path(),
        &["sweep-budget", "--n", "6", "--r", "2", "--method", "auction", "--episodes", "10", "--tta-runs", "50", "--multiples", "0,5,10"],
    );
    assert_eq!(csv_rows(&dir.path().join("budget_sweep.csv")), 3);
    fleetsched(
        dir.path(),
        &["concentration", "--groups", "2,3", "--group-size", "4", "--epsilons", "1", "--trials", "50"],
    );
    assert_eq!(csv_rows(&dir.path().join("concentration.csv")), 2);
}

#[test]
fn invalid_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fleetsched"))
        .args(["partition-quality", "--sizes", "10x3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not n:r"));
}
