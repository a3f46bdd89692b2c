use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn dln(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dln"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn dln")
}

fn body(text: &str) -> &str {
    text.splitn(3, '\n').nth(2).unwrap()
}

fn row<'a>(csv: &'a str, theta_prefix: &str, eps: &str) -> Vec<&'a str> {
    body(csv)
        .lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0].starts_with(theta_prefix) && f[1] == eps)
        .unwrap()
}

#[test]
fn coeffs_writes_known_beta_row_with_metadata() {
    let dir = tempdir().unwrap();
    let out = dln(&["coeffs"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("coeffs.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config: {\"command\":\"coeffs\""));
    assert!(lines.next().unwrap().starts_with("# sha256: "));
    assert!(lines.next().unwrap().starts_with("theta,eps,alpha0"));

    let f = row(&csv, "0.6666", "0.0");
    let beta: Vec<f64> = f[5..8].iter().map(|s| s.parse().unwrap()).collect();
    for (b, want) in beta.iter().zip([2.0 / 9.0, 2.0 / 9.0, 5.0 / 9.0]) {
        assert!((b - want).abs() < 1e-15, "{beta:?}");
    }

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "coeffs");
    assert_eq!(meta["passed"], true);
    assert!(meta["files"]["coeffs.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn rerun_is_byte_identical() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let args = ["ivp-converge", "--variable-steps", "--levels", "3", "--seed", "7"];
    assert!(dln(&args, a.path()).status.success());
    assert!(dln(&args, b.path()).status.success());
    for name in ["ivp_convergence.csv", "metadata.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"thetas": [0.5, 0.75], "eps": [0.25]}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = dln(&["coeffs", "--config", cfg.to_str().unwrap(), "--theta", "2/sqrt5"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(out_dir.join("coeffs.csv")).unwrap();
    let rows: Vec<&str> = body(&csv).lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0.894427190999915"));
    assert!(rows[0].split(',').nth(1) == Some("0.25"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = dln(&["coeffs", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = dln(&["coeffs", "--theta", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn short_adaptive_run_writes_ledgers() {
    let dir = tempdir().unwrap();
    let out = dln(
        &["nse-adapt", "--grid", "16", "--t-end", "0.05", "--algorithm", "lte", "--svg"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "adapt_summary.csv",
        "ledger_lte_theta0.8944.csv",
        "flags_lte_theta0.8944.csv",
        "traces_lte_theta0.8944.csv",
        "steps_lte_theta0.8944.svg",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(dir.path().join("adapt_summary.csv")).unwrap();
    let f: Vec<&str> = body(&summary).lines().nth(1).unwrap().split(',').collect();
    assert_eq!(f[0], "lte");
    assert_eq!(f[6], "0.05");
}
