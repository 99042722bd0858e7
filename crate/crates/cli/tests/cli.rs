use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpp-mle"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("DPP_MLE_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const IDENTITY_2: &str = r#"{"kernel": {"kind": "literal", "matrix": {"n": 2, "entries": [1, 0, 0, 1]}}, "count": 4}"#;

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "sim.json", IDENTITY_2);
    assert!(
        run(d, &["simulate", "--config", "sim.json", "--seed", "11", "--out", "a"])
            .status
            .success()
    );
    assert!(
        run(d, &["simulate", "--config", "sim.json", "--seed", "11", "--out", "b"])
            .status
            .success()
    );
    for f in ["samples.json", "table.csv", "simulate_config.json"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let samples = json(&d.join("a/samples.json"));
    assert_eq!(samples["draws"].as_array().unwrap().len(), 4);
    assert_eq!(json(&d.join("a/simulate_config.json"))["seed"], 11);

    let mut reader = csv::Reader::from_path(d.join("a/table.csv")).unwrap();
    let total: f64 = reader.records().map(|r| r.unwrap()[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn tridiagonal_precondition_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "bad.json",
        r#"{"kernel": {"kind": "tridiagonal", "a": 1.0, "b": 0.6, "n": 3}}"#,
    );
    let out = run(d, &["simulate", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a^2 > 4 b^2"));
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "bad.json", "{\n  \"count\": 4,\n  \"cuont\": 5\n}");
    let out = run(d, &["simulate", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cuont") && err.contains("line 3"), "{err}");
}

fn simulate_tridiagonal(d: &Path) {
    write(
        d,
        "sim.json",
        r#"{"kernel": {"kind": "tridiagonal", "a": 2.0, "b": 0.5, "n": 3}, "count": 3000}"#,
    );
    assert!(
        run(d, &["simulate", "--config", "sim.json", "--seed", "3", "--out", "sim"])
            .status
            .success()
    );
}

#[test]
fn estimate_reports_loss_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulate_tridiagonal(d);
    write(
        d,
        "est.json",
        r#"{"samples": "sim/samples.json", "true_kernel": {"kind": "tridiagonal", "a": 2.0, "b": 0.5, "n": 3}}"#,
    );
    assert!(
        run(d, &["estimate", "--config", "est.json", "--seed", "1", "--out", "e1"])
            .status
            .success()
    );
    assert!(
        run(d, &["estimate", "--config", "est.json", "--seed", "1", "--out", "e2"])
            .status
            .success()
    );
    let a = fs::read(d.join("e1/estimate.json")).unwrap();
    assert_eq!(a, fs::read(d.join("e2/estimate.json")).unwrap());
    let report = json(&d.join("e1/estimate.json"));
    assert!(report["loss"]["value"].as_f64().unwrap().is_finite());
    assert!(report["blockwise"]["cross"].as_f64().unwrap() == 0.0);
    assert_eq!(report["config"]["mle"]["seed"], 1);
}

#[test]
fn estimate_from_exact_table_recovers_kernel() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulate_tridiagonal(d);
    write(
        d,
        "est.json",
        r#"{"table": "sim/table.csv", "true_kernel": {"kind": "tridiagonal", "a": 2.0, "b": 0.5, "n": 3}}"#,
    );
    assert!(run(d, &["estimate", "--config", "est.json", "--out", "e"])
        .status
        .success());
    let loss = json(&d.join("e/estimate.json"))["loss"]["value"].as_f64().unwrap();
    assert!(loss <= 1e-4, "{loss}");
}

#[test]
fn estimate_input_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulate_tridiagonal(d);
    write(
        d,
        "mismatch.json",
        r#"{"samples": "sim/samples.json", "true_kernel": {"kind": "tridiagonal", "a": 2.0, "b": 0.5, "n": 4}}"#,
    );
    assert_eq!(
        run(d, &["estimate", "--config", "mismatch.json"]).status.code(),
        Some(2)
    );
    write(d, "garbage.json", "{\"n\": 3, \"draws\": [");
    write(d, "malformed.json", r#"{"samples": "garbage.json"}"#);
    assert_eq!(
        run(d, &["estimate", "--config", "malformed.json"]).status.code(),
        Some(2)
    );
    write(d, "neither.json", "{}");
    assert_eq!(run(d, &["estimate", "--config", "neither.json"]).status.code(), Some(2));
}

#[test]
fn curvature_scan_budget_and_reducible_rows() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "big.json", r#"{"n_max": 11}"#);
    assert_eq!(
        run(d, &["curvature-scan", "--config", "big.json"]).status.code(),
        Some(3)
    );

    write(d, "diag.json", r#"{"a": 2.0, "b": 0.0, "n_min": 1, "n_max": 4}"#);
    assert!(run(d, &["curvature-scan", "--config", "diag.json", "--out", "c"])
        .status
        .success());
    let report = json(&d.join("c/curvature.json"));
    let rows = report["rows"].as_array().unwrap();
    assert!(rows[1..].iter().all(|r| r["reducible"] == true && r["fitted"] == false));
    assert!(report["fit"].is_null());
    assert_eq!(report["config"]["budget"], 10);
    assert!(d.join("c/curvature.csv").exists());
}

#[test]
fn curvature_scan_decays() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "scan.json", r#"{"n_min": 3, "n_max": 6}"#);
    assert!(run(d, &["curvature-scan", "--config", "scan.json", "--threads", "2"])
        .status
        .success());
    let fit = &json(&d.join("curvature.json"))["fit"];
    assert!(fit["slope"].as_f64().unwrap() < 0.0);
    assert!(fit["c2"].as_f64().unwrap() > 0.0);
}

#[test]
fn rate_study_oracle_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "oracle.json",
        r#"{"estimator": "oracle", "sample_sizes": [10, 100, 1000], "replicates": 4}"#,
    );
    assert!(run(d, &["rate-study", "--config", "oracle.json", "--out", "o"])
        .status
        .success());
    let report = json(&d.join("o/rate.json"));
    assert!(report["slopes"]["total"].is_null() && report["slopes"]["cross"].is_null());
    assert!(report["rows"].as_array().unwrap().iter().all(|r| r["mean_loss"] == 0.0));
    assert_eq!(report["config"]["mle"]["max_iters"], 2000);

    write(d, "mle.json", r#"{"sample_sizes": [200, 400, 800], "replicates": 6}"#);
    write(d, "mle3.json", r#"{"sample_sizes": [200, 400, 800], "replicates": 3}"#);
    assert!(
        run(d, &["rate-study", "--config", "mle.json", "--seed", "9", "--out", "a"])
            .status
            .success()
    );
    assert!(run(
        d,
        &[
            "rate-study",
            "--config",
            "mle.json",
            "--seed",
            "9",
            "--out",
            "b",
            "--threads",
            "1"
        ]
    )
    .status
    .success());
    assert!(
        run(d, &["rate-study", "--config", "mle3.json", "--seed", "9", "--out", "c"])
            .status
            .success()
    );
    for f in ["rate.json", "rate.csv", "rate_replicates.csv"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let six = fs::read_to_string(d.join("a/rate_replicates.csv")).unwrap();
    let three = fs::read_to_string(d.join("c/rate_replicates.csv")).unwrap();
    let first_three: Vec<&str> = six
        .lines()
        .filter(|l| {
            let r: Vec<&str> = l.split(',').collect();
            r[1].parse::<usize>().map_or(true, |i| i < 3)
        })
        .collect();
    assert_eq!(first_three, three.lines().collect::<Vec<_>>());
}

#[test]
fn rate_study_rejects_unsorted_sizes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "bad.json", r#"{"sample_sizes": [1000, 100, 10000]}"#);
    assert_eq!(run(d, &["rate-study", "--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn variance_growth_reports() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "vg.json", r#"{"n_min": 3, "n_max": 5}"#);
    assert!(run(d, &["variance-growth", "--config", "vg.json", "--out", "v"])
        .status
        .success());
    let report = json(&d.join("v/variance.json"));
    let top: Vec<f64> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["max_eigenvalue"].as_f64().unwrap())
        .collect();
    assert!(top.windows(2).all(|w| w[1] > w[0]));

    write(d, "diag.json", r#"{"a": 2.0, "b": 0.0, "n_min": 2, "n_max": 4}"#);
    assert!(run(d, &["variance-growth", "--config", "diag.json", "--out", "w"])
        .status
        .success());
    let report = json(&d.join("w/variance.json"));
    assert!(report["rows"].as_array().unwrap().iter().all(|r| r["singular"] == true));
    assert!(report["fit"].is_null());
}

#[test]
fn hessian_null_space_on_blocks() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "h.json",
        r#"{"kernel": {"kind": "blocks", "blocks": [{"n": 2, "entries": [2, 0.5, 0.5, 2]}, {"n": 1, "entries": [2]}]}}"#,
    );
    assert!(run(d, &["hessian", "--config", "h.json", "--out", "h"])
        .status
        .success());
    let report = json(&d.join("h/hessian.json"));
    assert_eq!(report["null_space"]["numerical_dimension"], 2);
    assert_eq!(report["null_space"]["cross_block_dimension"], 2);
    assert!(report["null_space"]["principal_angle"].as_f64().unwrap() < 1e-6);
    assert!(d.join("h/hessian_matrix.csv").exists());
}

#[test]
fn verify_identities_and_thread_override() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "id.json", r#"{"trials": 20, "n_max": 6}"#);
    assert!(run(d, &["verify-identities", "--config", "id.json"]).status.success());
    assert_eq!(json(&d.join("identities.json"))["passed"], true);

    let out = Command::new(env!("CARGO_BIN_EXE_dpp-mle"))
        .args(["verify-identities", "--threads", "2"])
        .current_dir(d)
        .env("DPP_MLE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
