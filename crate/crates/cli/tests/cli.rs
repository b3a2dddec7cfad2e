use std::path::Path;
use std::process::Command;

fn metabayes() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metabayes"));
    c.env_remove("METABAYES_SEED");
    c
}

fn tiny_config(dir: &Path, extra_dataset: &str) -> std::path::PathBuf {
    let cfg = format!(
        r#"{{
  "dataset": [
    {{"name": "easy", "source": {{"kind": "sinusoid", "preset": "easy"}},
      "split": {{"n_train_tasks": 6, "n_samples_per_train_task": 6, "n_test_tasks": 3, "n_context": 3, "n_test_samples": 4}}}}
    {extra_dataset}
  ],
  "model": {{"method": ["BLR-PR-FC", "GPR-SE-IN"], "hidden": [4], "latent_dim": 3}},
  "trainer": {{"max_steps": 10, "eval_every": 5}},
  "seeds": [0]
}}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn verify_exit_codes() {
    let ok = metabayes()
        .args(["verify", "--instances", "20", "--chain-instances", "20"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("all suites passed"));

    let caps = metabayes()
        .args([
            "verify",
            "--instances",
            "10",
            "--chain-instances",
            "10",
            "--caps",
            "1,1,1,1",
        ])
        .output()
        .unwrap();
    assert_eq!(caps.status.code(), Some(0));

    let bad = metabayes()
        .args([
            "verify",
            "--instances",
            "10",
            "--chain-instances",
            "10",
            "--corrupt-lambda0",
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn benchmark_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("out");
    let run = metabayes()
        .args(["--quiet", "benchmark", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "0,1"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,dataset,seed,ll,rmse,calib,runtime_s,config_hash");
    // 2 methods x 2 seeds plus one mean row per method.
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(out.join("results.json").is_file());
    assert!(out.join("calibration.csv").is_file());
    assert!(String::from_utf8_lossy(&run.stdout).contains("BLR-PR-FC"));

    // A checkpoint from the grid evaluates through `eval`.
    let ck = std::fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let ev = metabayes()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ck)
        .output()
        .unwrap();
    assert_eq!(ev.status.code(), Some(0), "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(String::from_utf8_lossy(&ev.stdout).contains("ll "));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("gen");
    let run = metabayes()
        .env("METABAYES_SEED", "42")
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert!(out.join("easy_seed42_train.csv").is_file());
    assert!(out.join("easy_seed42_test.csv").is_file());
}

#[test]
fn missing_csv_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#", {"name": "real", "source": {"kind": "csv", "train": "missing_train.csv", "test": "missing_test.csv"},
      "split": {"n_train_tasks": 5, "n_samples_per_train_task": 10, "n_test_tasks": 2, "n_context": 3, "n_test_samples": 3}}"#;
    let cfg = tiny_config(dir.path(), extra);
    let run = metabayes().args(["benchmark", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("does not exist"));
    assert!(!dir.path().join("results").exists());
}

#[test]
fn sweep_width_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("sweep");
    let run = metabayes()
        .args(["--quiet", "sweep-width", "--widths", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.join("width_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,0,"));
}

#[test]
fn usage_errors_exit_with_config_code() {
    let run = metabayes().args(["verify", "--caps", "1,2"]).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
    let run = metabayes().args(["no-such-command"]).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(metabayes().arg("--help").output().unwrap().status.code(), Some(0));
}
