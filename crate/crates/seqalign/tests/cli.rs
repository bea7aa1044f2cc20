//! Black-box tests of the `seqalign` binary: the full
//! generate → train → eval → sweep flow, flag handling, determinism at the
//! artifact level, and the exit-code contract (0 success, 2 bad input).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seqalign::config::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqalign"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn")
}

fn assert_status(out: &Output, want: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(
        out.status.code(),
        Some(want),
        "unexpected exit status; stderr: {stderr}"
    );
}

/// Generate a small task and shrink the training run so the suite stays fast.
fn generate_quick_task(dir: &Path) {
    let out = run(
        dir,
        &[
            "generate",
            "--out",
            ".",
            "--entities",
            "12",
            "--block-size",
            "2",
            "--dim",
            "4",
            "--extra-triples",
            "12",
        ],
    );
    assert_status(&out, 0);
    let config_path = dir.join("run.toml");
    let mut config = RunConfig::parse(&fs::read_to_string(&config_path).unwrap(), "run.toml").unwrap();
    config.trainer.episodes = 5;
    config.trainer.candidates = 3;
    fs::write(&config_path, config.to_toml()).unwrap();
}

#[test]
fn generate_train_eval_sweep_flow_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    for name in [
        "rel_triples_1",
        "rel_triples_2",
        "emb_1.txt",
        "emb_2.txt",
        "ent_links_train",
        "ent_links_valid",
        "ent_links_test",
        "run.toml",
    ] {
        assert!(dir.path().join(name).exists(), "generate should write {name}");
    }

    let out = run(dir.path(), &["train", "--config", "run.toml"]);
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("trained 5 episodes"), "stdout was: {stdout}");
    let run_dir = dir.path().join("run");
    for name in ["metrics.csv", "checkpoint.bin", "manifest.json"] {
        assert!(run_dir.join(name).exists(), "train should write {name}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("episode,alignment_count,episode_length,total_reward,mean_skip_rate\n"));
    assert_eq!(metrics.lines().count(), 6);

    let out = run(
        dir.path(),
        &["eval", "--config", "run.toml", "--checkpoint", "run/checkpoint.bin"],
    );
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for strategy in ["ranking:", "seq:", "rl:"] {
        assert!(stdout.contains(strategy), "stdout was: {stdout}");
    }
    let summary = fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("strategy,hits_at_1,precision,recall,f1\n"));
    assert_eq!(summary.lines().count(), 4);
    assert!(run_dir.join("results.json").exists());

    // The threshold knob re-evaluates without retraining, so it is the
    // cheapest full sweep.
    let out = run(
        dir.path(),
        &[
            "sweep",
            "--config",
            "run.toml",
            "--knob",
            "threshold",
            "--values",
            "0.5,0.9",
        ],
    );
    assert_status(&out, 0);
    let sweep = fs::read_to_string(run_dir.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("knob,value,hits_at_1,precision,recall,f1,train_seconds,eval_seconds\n"));
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.contains("threshold,0.5,") && sweep.contains("threshold,0.9,"));
}

#[test]
fn same_seed_reruns_reproduce_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    for out_dir in ["first", "second"] {
        let out = run(
            dir.path(),
            &["train", "--config", "run.toml", "--out", out_dir, "--seed", "123"],
        );
        assert_status(&out, 0);
    }
    let metrics_a = fs::read(dir.path().join("first/metrics.csv")).unwrap();
    let metrics_b = fs::read(dir.path().join("second/metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics CSVs must be byte-identical");
    let ckpt_a = fs::read(dir.path().join("first/checkpoint.bin")).unwrap();
    let ckpt_b = fs::read(dir.path().join("second/checkpoint.bin")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("first/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 123);
    assert_eq!(manifest["episodes"], 5);
}

#[test]
fn ablation_flags_are_recorded_and_applied() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    let out = run(
        dir.path(),
        &["train", "--config", "run.toml", "--out", "nomie", "--ablation", "no-mie"],
    );
    assert_status(&out, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("nomie/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["trainer"]["disable_mie"], true);

    let out = run(
        dir.path(),
        &["train", "--config", "run.toml", "--out", "rand", "--ablation", "rand-env"],
    );
    assert_status(&out, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rand/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["trainer"]["random_env"], true);

    // The two ablations and the baseline all see different environments or
    // models, so their metrics logs must differ.
    let out = run(dir.path(), &["train", "--config", "run.toml", "--out", "base"]);
    assert_status(&out, 0);
    let base = fs::read(dir.path().join("base/metrics.csv")).unwrap();
    let nomie = fs::read(dir.path().join("nomie/metrics.csv")).unwrap();
    let rand = fs::read(dir.path().join("rand/metrics.csv")).unwrap();
    assert_ne!(base, rand, "shuffling the queue must change the episode log");
    assert_ne!(base, nomie, "removing the MIE input must change the episode log");
}

#[test]
fn strategy_subset_runs_only_the_requested_strategies() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    // ranking and seq need no checkpoint.
    let out = run(
        dir.path(),
        &["eval", "--config", "run.toml", "--strategies", "ranking,seq"],
    );
    assert_status(&out, 0);
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/results.json")).unwrap()).unwrap();
    let names: Vec<&str> = results
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["strategy"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["ranking", "seq"]);
}

#[test]
fn rl_strategy_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    let out = run(dir.path(), &["eval", "--config", "run.toml", "--strategies", "rl"]);
    assert_status(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--checkpoint"), "stderr was: {stderr}");
    assert!(!dir.path().join("run/results.json").exists(), "no partial results");
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    let out = run(dir.path(), &["eval", "--config", "run.toml", "--strategies", "bogus"]);
    assert_status(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "stderr was: {stderr}");
}

#[test]
fn missing_input_file_exits_2_naming_the_path_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    fs::remove_file(dir.path().join("rel_triples_1")).unwrap();
    let out = run(dir.path(), &["train", "--config", "run.toml"]);
    assert_status(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rel_triples_1"), "stderr was: {stderr}");
    assert!(!dir.path().join("run").exists(), "a failed run must not create outputs");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    let config_path = dir.path().join("run.toml");
    let mut text = fs::read_to_string(&config_path).unwrap();
    text.push_str("\n[trainer.extra]\nunknown_knob = 1\n");
    fs::write(&config_path, text).unwrap();
    let out = run(dir.path(), &["train", "--config", "run.toml"]);
    assert_status(&out, 2);
}

#[test]
fn generate_rejects_impossible_block_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["generate", "--out", ".", "--entities", "10", "--block-size", "3"],
    );
    assert_status(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("block"), "stderr was: {stderr}");
}

#[test]
fn empty_sweep_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_quick_task(dir.path());
    let out = run(
        dir.path(),
        &["sweep", "--config", "run.toml", "--knob", "threshold", "--values", " , "],
    );
    assert_status(&out, 2);
}
