use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lcflow(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lcflow"));
    cmd.args(args).env_remove("LCFLOW_OUT");
    if let Some(dir) = out_env {
        cmd.env("LCFLOW_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn small(preset: &str) -> String {
    format!(r#"{{"problem": {{"preset": "{preset}"}}, "grid": {{"steps": 10}}, "monte_carlo": {{"paths": 400}}, "checks": {{"validation_samples": 200}}}}"#)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_passes_and_writes_headed_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("P1"));
    let out = dir.path().join("out");
    let res = lcflow(&["validate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("PASS"));

    let report = read_json(&out.join("report.json"));
    let meta = read_json(&out.join("run-metadata.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["config_hash"], meta["config_hash"]);
    let tables: Vec<_> = std::fs::read_dir(out.join("tables")).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(!tables.is_empty());
    for t in tables {
        let text = std::fs::read_to_string(&t).unwrap();
        let header = text.lines().next().unwrap_or_default();
        assert!(header.chars().any(char::is_alphabetic), "{} has no header", t.display());
    }
}

#[test]
fn verify_lq_on_the_benchmark_passes() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"problem": {"preset": "P1"}, "grid": {"steps": 20}, "monte_carlo": {"paths": 4000}}"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let res = lcflow(&["verify-lq", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
}

#[test]
fn environment_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("P1"));
    let flag_dir = dir.path().join("flag");
    let env_dir = dir.path().join("env");
    let res = lcflow(&["validate", "--config", &cfg, "--out", flag_dir.to_str().unwrap()], Some(&env_dir));
    assert_eq!(res.status.code(), Some(0));
    assert!(env_dir.join("report.json").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn seed_flag_changes_the_hash_but_out_dir_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("P1"));
    let hash = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        let res = lcflow(&["validate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed], None);
        assert_eq!(res.status.code(), Some(0));
        read_json(&out.join("run-metadata.json"))["config_hash"].clone()
    };
    let a = hash("a", "3");
    assert_eq!(a, hash("b", "3"));
    assert_ne!(a, hash("c", "4"));
}

#[test]
fn non_convergence_exits_with_contract_failure() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"problem": {"preset": "P2"}, "grid": {"steps": 10}, "monte_carlo": {"paths": 400}, "descent": {"max_iter": 1}}"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let res = lcflow(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(1));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["passed"], Value::Bool(false));
    assert!(report["error"].as_str().unwrap().contains("converge"));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let res = lcflow(&["frobnicate", "--config", "x.json"], None);
    assert_eq!(res.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let res = lcflow(&["validate", "--config", missing.to_str().unwrap(), "--out", out], None);
    assert_eq!(res.status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"problem": {"preset": "P1"}, "gird": {}}"#);
    assert_eq!(lcflow(&["validate", "--config", &cfg, "--out", out], None).status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"problem": {"preset": "P9"}}"#);
    assert_eq!(lcflow(&["validate", "--config", &cfg, "--out", out], None).status.code(), Some(2));

    let cfg = write_config(dir.path(), &small("P2"));
    assert_eq!(lcflow(&["verify-lq", "--config", &cfg, "--out", out], None).status.code(), Some(2));
}

#[test]
fn problem_file_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = lcflow::problem::presets::p1(0.3);
    let doc = lcflow::problem::ProblemDocument::from_spec(&spec).to_json_string().unwrap();
    std::fs::create_dir(dir.path().join("problems")).unwrap();
    std::fs::write(dir.path().join("problems/p1.json"), doc).unwrap();
    let body = r#"{"problem": {"path": "problems/p1.json"}, "grid": {"steps": 10}, "monte_carlo": {"paths": 400}, "checks": {"validation_samples": 200}}"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let res = lcflow(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}
