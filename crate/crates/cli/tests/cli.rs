//! End-to-end checks of the command-line interface: exit codes, artifact
//! layout, and the seed/out overrides.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invariant-dp"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn validate_accepts_a_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(
        dir.path(),
        "ok.json",
        &format!(
            r#"{{"schema": 1, "kind": "tabular_oracle", "seed": 3, "out_dir": {:?}}}"#,
            out_dir
        ),
    );
    let output = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stdout).contains("ok"));
}

#[test]
fn validate_rejects_schema_mismatch_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        r#"{"schema": 9, "kind": "tabular_oracle", "seed": 3, "out_dir": "out"}"#,
    );
    let output = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("schema"));
}

#[test]
fn run_reports_missing_config_with_exit_one() {
    let output = bin().arg("run").arg("/nonexistent/config.json").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_exits_one() {
    let output = bin().arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn run_tabular_emits_artifacts_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = write_config(
        dir.path(),
        "tab.json",
        r#"{"schema": 1, "kind": "tabular_oracle", "seed": 5, "out_dir": "ignored",
            "tabular": {"states": 4, "actions": 3}}"#,
    );
    let output = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(out_dir.join("values.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["seed"], 5);
}

#[test]
fn seed_override_lands_in_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = write_config(
        dir.path(),
        "tab.json",
        r#"{"schema": 1, "kind": "tabular_oracle", "seed": 5, "out_dir": "ignored"}"#,
    );
    let output = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .arg("--seed")
        .arg("77")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seed"], 77);
}

#[test]
fn failed_comparison_exits_two() {
    // A huge solve tolerance leaves the iterate far from the enumeration
    // optimum, which the run reports as a certification failure.
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = write_config(
        dir.path(),
        "loose.json",
        r#"{"schema": 1, "kind": "tabular_oracle", "seed": 5, "out_dir": "ignored",
            "tabular": {"states": 4, "actions": 3, "discount": 0.9, "tol": 0.5}}"#,
    );
    let output = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], false);
}

#[test]
fn oracle_tabular_prints_json_and_passes() {
    let output = bin()
        .args(["oracle-tabular", "--states", "4", "--actions", "3", "--seed", "11"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&output.stdout)).unwrap();
    assert_eq!(summary["pass"], true);
    assert!(summary["max_difference"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn oracle_tabular_rejects_oversized_enumerations() {
    let output = bin()
        .args(["oracle-tabular", "--states", "20", "--actions", "10", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn run_linear_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = write_config(
        dir.path(),
        "linear.json",
        r#"{"schema": 1, "kind": "linear", "seed": 12, "out_dir": "ignored",
            "linear": {"closure_samples": 60, "closure_steps": 200,
                       "invariance_samples": 40, "invariance_steps": 40,
                       "nonemptiness_samples": 40, "trajectory_count": 2,
                       "trajectory_steps": 50, "rollout_checks": 3}}"#,
    );
    let output = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    for name in [
        "summary.json",
        "trajectories.csv",
        "vi_convergence.csv",
        "value_function.csv",
        "rollout_check.csv",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
}
