mod common;

use std::process::Command;

use common::fixture;

fn tool() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spectral-cert"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

#[test]
fn missing_config_exits_with_error() {
    let out = tool().arg(fixture("does_not_exist.yaml")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does_not_exist.yaml"));
}

#[test]
fn bad_flag_exits_with_error() {
    let out = tool().args(["--tune", "sideways"]).arg(fixture("tiny.yaml")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn certified_run_prints_result() {
    let out = tool().arg(fixture("tiny.yaml")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["outcome"], "certified");
    assert_eq!(v["schema"], 1);
    let p = v["safety_probability"].as_f64().unwrap();
    let (eta, c) = (v["eta"].as_f64().unwrap(), v["c"].as_f64().unwrap());
    assert!((p - (1.0 - eta - 5.0 * c).max(0.0)).abs() < 1e-12);
    assert!(v.get("timings").is_none());
}

#[test]
fn infeasible_spec_exits_two() {
    let out = tool().arg(fixture("overlap.yaml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["outcome"], "infeasible");
    assert!(v["safety_probability"].is_null());
}

#[test]
fn output_plot_and_lp_files() {
    let dir = tempfile::tempdir().unwrap();
    let (json, csv, lp) = (dir.path().join("r.json"), dir.path().join("b.csv"), dir.path().join("p.lp"));
    let out = tool()
        .arg(fixture("tiny.yaml"))
        .arg("-o")
        .arg(&json)
        .arg("--plot")
        .arg(&csv)
        .arg("--export-lp")
        .arg(&lp)
        .args(["--falsify", "--timings"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v["timings"].as_array().is_some_and(|t| !t.is_empty()));
    assert_eq!(v["falsification"]["grid_per_dim"], 2000);

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,barrier"));
    assert_eq!(lines.count(), 1001);

    let model = std::fs::read_to_string(&lp).unwrap();
    assert!(model.contains("Subject To"));
    assert!(model.trim_end().ends_with("End"));
}

#[test]
fn seed_override_changes_samples() {
    let a = tool().arg(fixture("tiny.yaml")).output().unwrap();
    let b = tool().arg(fixture("tiny.yaml")).output().unwrap();
    let c = tool().args(["--seed", "4"]).arg(fixture("tiny.yaml")).output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn verify_key_runs_falsifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("verify.yaml");
    let text = std::fs::read_to_string(fixture("tiny.yaml")).unwrap() + "verify: true\n";
    std::fs::write(&cfg, text).unwrap();
    let out = tool().arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["falsification"].is_object(), "{v}");
}
