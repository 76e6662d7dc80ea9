use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn b2b(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_b2b"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"{
  "k": 4, "ell": 4, "hidden": [8], "map_hidden": [8],
  "steps": 10, "eval_interval": 5, "seeds": [3], "fit_functions": 20,
  "dataset": {"name": "derivative", "options": {"n_test": 5}}
}"#;

#[test]
fn train_succeeds_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), TINY).unwrap();
    let out = b2b(dir.path(), &["--config", "c.json", "--out", "run", "--seed", "7", "--steps", "6", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    // Six input-basis steps precede evaluations at output steps 5 and 6.
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("b2b-linear,derivative,7,")));
    assert!(rows[1].contains(",12,"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"modle": "svd"}"#).unwrap();
    for args in [
        vec!["--config", "bad.json", "train"],
        vec!["--config", "missing.json", "train"],
        vec!["train", "--model", "fno"],
        vec!["--steps", "0", "train"],
        vec!["ablate", "--axis", "width", "--values", "1"],
        vec!["frobnicate"],
    ] {
        let out = b2b(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(
        r#""steps": 10"#,
        r#""steps": 10, "optimizer": {"kind": "sgd", "lr": 1e200}"#,
    );
    fs::write(dir.path().join("c.json"), cfg).unwrap();
    let out = b2b(dir.path(), &["--config", "c.json", "--out", "run", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), TINY).unwrap();
    let out = b2b(dir.path(), &["--config", "c.json", "--out", "data", "gen", "--dataset", "antiderivative"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/manifest.json").exists());

    let out = b2b(dir.path(), &["--config", "c.json", "--out", "run", "train"]);
    assert!(out.status.success());
    let out = b2b(
        dir.path(),
        &["--config", "c.json", "--out", "run", "analyze", "--what", "decay", "--checkpoint", "run/seed3/checkpoint_best"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(dir.path().join("run/decay.csv")).unwrap().starts_with("index,magnitude,source\n"));
}

#[test]
fn gen_flags_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = b2b(
        dir.path(),
        &["--out", "heat", "--seed", "4", "gen", "--dataset", "heat", "--grid", "4x3x2", "--n", "3", "--n-test", "2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("heat/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_train"], 3);
    assert_eq!(manifest["n_test"], 2);
    assert_eq!(manifest["p"], 24);
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["params"]["grid"], "4x3x2");
}
