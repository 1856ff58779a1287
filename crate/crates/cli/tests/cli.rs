//! End-to-end runs of the `oqrw` binary: outputs, files and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oqrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqrw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const BROKEN: &str = r#"{
  "lattice_dim": 1,
  "internal_dim": 1,
  "steps": [
    {"displacement": [1], "matrix": [[{"re": 0.7071067811865476, "im": 0.0}]]},
    {"displacement": [-1], "matrix": [[{"re": 0.7078133207713, "im": 0.0}]]}
  ]
}"#;

#[test]
fn validate_builtins_and_broken_file() {
    let out = oqrw(&["validate", "--builtin", "std_example"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["choi_psd"], true);
    assert_eq!(v["h1"], true);

    let out = oqrw(&["validate", "--builtin", "classical_dilation", "--p", "0.5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["internal_dim"], 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, BROKEN).unwrap();
    let out = oqrw(&["validate", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let residual = json(&out)["residual"].as_f64().unwrap();
    assert!((residual - 1e-3).abs() < 1e-5, "{residual}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));
}

#[test]
fn parse_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(code(&oqrw(&["validate", "--model", path.to_str().unwrap()])), 2);
    assert_eq!(code(&oqrw(&["analyze", "--builtin", "nope"])), 2);
    assert_eq!(code(&oqrw(&["analyze"])), 2);
}

#[test]
fn analyze_reports_structure() {
    let v = json(&oqrw(&["analyze", "--builtin", "std_example"]));
    assert_eq!(v["l_irreducible"], true);
    assert_eq!(v["period"], 1);
    assert_eq!(v["regular"], true);
    assert_eq!(v["r_dimension"], 2);
    assert_eq!(v["c2_situation"], 1);

    let v = json(&oqrw(&["analyze", "--builtin", "periodic_example"]));
    assert_eq!(v["l_irreducible"], true);
    assert_eq!(v["period"], 2);

    let v = json(&oqrw(&["analyze", "--builtin", "breakdown_example"]));
    assert_eq!(v["l_irreducible"], false);
    assert_eq!(v["c2_situation"], 2);
    assert_eq!(v["r_dimension"], 1);
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn asymptotics_outputs() {
    let v = json(&oqrw(&["asymptotics", "--builtin", "std_example"]));
    assert!(v["m"][0].as_f64().unwrap().abs() < 1e-10);
    assert!((v["c"][0][0].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-9);
    assert_eq!(v["upper_bound_only"], false);

    let dir = tempfile::tempdir().unwrap();
    let out = oqrw(&[
        "asymptotics",
        "--builtin",
        "periodic_example",
        "--x-min",
        "0",
        "--x-max",
        "1",
        "--x-points",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&dir.path().join("rate.csv"));
    let t = 0.5f64;
    let ut = 0.5 * ((2.0 * t + (t * t + 3.0).sqrt()) / (3.0 * (1.0 - t))).ln();
    let expected = t * ut + 1.5 * 2f64.ln()
        - 0.5 * ((ut.exp() + (-ut).exp()).ln() + (3.0 * ut.exp() + (-ut).exp()).ln());
    let row = rows.iter().find(|r| r[0] == "0.5").expect("x = 0.5 row");
    let got: f64 = row[1].parse().unwrap();
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    assert!(dir.path().join("lambda.csv").exists());

    let v = json(&oqrw(&["asymptotics", "--builtin", "breakdown_example"]));
    assert_eq!(v["upper_bound_only"], true);
    let u = v["kinks"][0]["u"].as_f64().unwrap();
    assert!((u - 0.5 * 2f64.ln()).abs() < 1e-4);
}

#[test]
fn rate_marks_points_outside_the_hull() {
    let v = json(&oqrw(&[
        "rate", "--builtin", "std_example", "--x-min", "-1.5", "--x-max", "1.5", "--x-points", "3",
    ]));
    assert_eq!(v["rate"][0], "inf");
    assert!(v["rate"][1].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(v["rate"][2], "inf");
}

#[test]
fn simulate_is_reproducible_and_deterministic_walk_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = oqrw(&[
        "simulate", "--builtin", "classical_dilation", "--p", "1", "-P", "10", "-N", "3", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&dir.path().join("batch.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == "10"));

    let a = oqrw(&["simulate", "--builtin", "periodic_example", "-P", "100", "-N", "200", "--seed", "5"]);
    let b = oqrw(&["simulate", "--builtin", "periodic_example", "-P", "100", "-N", "200", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_clt_on_standard_example() {
    let v = json(&oqrw(&["simulate", "--builtin", "std_example", "-P", "1000", "-N", "10000", "--seed", "42"]));
    assert!(v["ks_distance"].as_f64().unwrap() <= 0.05);
}

#[test]
fn oracle_check_agrees() {
    let out = oqrw(&["oracle-check", "--builtin", "periodic_example", "-p", "6", "-u", "0.3"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!(v["relative_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["agree"], true);
}

#[test]
fn random_initial_state_is_used() {
    let a = json(&oqrw(&["oracle-check", "--builtin", "std_example", "-p", "3", "--random-initial", "7"]));
    let b = json(&oqrw(&["oracle-check", "--builtin", "std_example", "-p", "3"]));
    assert_ne!(a["distribution"], b["distribution"]);
}

#[test]
fn multiplicity_without_fallback_exits_five() {
    // Two decoupled 1x1 blocks inside a 3-dimensional space.
    let doc = r#"{
      "lattice_dim": 1,
      "internal_dim": 3,
      "steps": [
        {"displacement": [1], "matrix": [
          [{"re": 0.6, "im": 0}, {"re": 0, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0.8, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0, "im": 0}, {"re": 0.6, "im": 0}]]},
        {"displacement": [-1], "matrix": [
          [{"re": 0.8, "im": 0}, {"re": 0, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0.6, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0, "im": 0}, {"re": 0.8, "im": 0}]]}
      ]
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    std::fs::write(&path, doc).unwrap();
    let out = oqrw(&["asymptotics", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn situation_three_uses_closed_form() {
    let doc = r#"{
      "lattice_dim": 1,
      "internal_dim": 2,
      "steps": [
        {"displacement": [1], "matrix": [
          [{"re": 0.6, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0.8, "im": 0}]]},
        {"displacement": [-1], "matrix": [
          [{"re": 0.8, "im": 0}, {"re": 0, "im": 0}],
          [{"re": 0, "im": 0}, {"re": 0.6, "im": 0}]]}
      ]
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diag.json");
    std::fs::write(&path, doc).unwrap();
    let out = oqrw(&["asymptotics", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["details"]["source"], "c2_closed_form");
    // Mixture of drifts 0.36 - 0.64 and 0.64 - 0.36 with equal weights.
    assert!(v["m"][0].as_f64().unwrap().abs() < 1e-12);
}
