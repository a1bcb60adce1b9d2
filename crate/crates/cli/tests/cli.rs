use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[env]
preset = "pursuit_small"
episode_limit = 10

[train]
total_steps = 60

[eval]
interval_steps = 30
episodes = 1
final_episodes = 2

[run]
dump_trajectories = true
"#;

fn jim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jim"))
        .args(args)
        .env("JIM_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn unknown_key_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[method]\nlearning_rate_typo = 1.0\n").unwrap();
    let o = jim(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "config");
    assert!(e["path"].as_str().unwrap().contains("method"), "{e}");
}

#[test]
fn invalid_value_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[method]\ngamma = 2.0\n").unwrap();
    let o = jim(&["evaluate", "--config", cfg.to_str().unwrap(), "--checkpoint", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["path"], "method.gamma");
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = jim(&["evaluate", "--checkpoint", "/nonexistent/final.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = jim(&["gradcheck"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("objective") && !text.contains("FAIL"), "{text}");
}

#[test]
fn partition_bench_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = jim(&["partition-bench", "--graphs", "50"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["violations"], 0);
    assert!(v["mean_greedy_over_optimal"].as_f64().unwrap() >= 1.0);
}

#[test]
fn train_then_evaluate_adhoc_ablate_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();

    let o = jim(&["train", "--config", c, "--seed", "7"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("seed_7");
    for f in ["training_log.csv", "losses.csv", "config.toml", "summary.json", "final.ckpt", "trajectories.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("training_log.csv")).unwrap();
    assert!(log.starts_with("# seed=7\n# config_hash="));
    assert!(dir.path().join("aggregate.json").exists());

    let ckpt = run.join("final.ckpt");
    let k = ckpt.to_str().unwrap();
    let o = jim(&["evaluate", "--config", c, "--checkpoint", k, "--episodes", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metrics"]["episodes"], 2);

    let o = jim(&["adhoc", "--config", c, "--checkpoint", k, "--episodes", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = jim(&["ablate", "--config", c, "--kind", "zero-intention", "--checkpoint", k], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = jim(&["ablate", "--config", c, "--kind", "zero-intention"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = jim(&["analyze", "--config", c, "--dumps", dir.path().to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["selection.csv", "observer.csv", "continuity.csv", "cooccurrence.csv"] {
        let text = std::fs::read_to_string(dir.path().join("analysis").join(f)).unwrap();
        assert!(text.starts_with("# config_hash="), "{f}");
    }
}

#[test]
fn seeds_fan_out_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let o = jim(
        &["train", "--config", cfg.to_str().unwrap(), "--seeds", "1,2", "--jobs", "2", "--mode", "flat-qmix"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("seed_1/final.ckpt").exists());
    assert!(dir.path().join("seed_2/final.ckpt").exists());
    let a = std::fs::read_to_string(dir.path().join("seed_1/losses.csv")).unwrap();
    assert!(a.contains("mode=flat_qmix"));
}
