use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str], config: &str) -> (Output, PathBuf) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_framestat"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (output, out)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn invalid_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["simulate"],
        r#"{"manifold": "klein_bottle", "x0": [0.0, 0.0]}"#,
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sphere"), "{err}");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run(
        dir.path(),
        &["simulate"],
        r#"{"manifold": "euclidean(2)", "x0": [0.0, 0.0], "nsteps": 10}"#,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_value_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    // Valid manifold, invalid time list: nothing may be written.
    let (o, out) = run(
        dir.path(),
        &["diagnose"],
        r#"{"manifold": "euclidean(2)", "x0": [0.0, 0.0], "target": [0.5, 0.0], "times": [-1.0]}"#,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("hormander.json").exists());
}

#[test]
fn unreachable_tolerance_exits_3_with_best_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["distance"],
        r#"{"manifold": "sphere", "x0": [1.2, 0.1], "target": [1.9, 1.4],
            "shooting": {"starts": 1, "steps": 4, "tol": 1e-300, "transversality_tol": 1e-300}}"#,
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("distance.json"));
    assert_eq!(j["converged"], Value::Bool(false));
}

#[test]
fn reruns_are_byte_identical() {
    let cfg =
        r#"{"manifold": "sphere", "x0": [1.3, 0.2], "n_paths": 200, "steps": 50, "horizon": 0.3}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, out_a) = run(a.path(), &["--seed", "9", "simulate"], cfg);
    let (ob, out_b) = run(b.path(), &["--seed", "9", "simulate"], cfg);
    assert!(oa.status.success() && ob.status.success());
    for f in ["ensemble.csv", "summary.json"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg =
        r#"{"manifold": "sphere", "x0": [1.3, 0.2], "n_paths": 100, "steps": 40, "horizon": 0.3}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, out_a) = run(a.path(), &["--threads", "1", "simulate"], cfg);
    let (_, out_b) = run(b.path(), &["--threads", "3", "simulate"], cfg);
    assert_eq!(
        fs::read(out_a.join("ensemble.csv")).unwrap(),
        fs::read(out_b.join("ensemble.csv")).unwrap()
    );
}

#[test]
fn simulate_plane_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["simulate"],
        r#"{"manifold": "euclidean(2)", "x0": [0.0, 0.0], "frame": [[2.0, 0.0], [0.0, 1.0]],
            "n_paths": 4000, "steps": 2, "horizon": 1.0}"#,
    );
    assert!(o.status.success());
    let j = read_json(&out.join("summary.json"));
    let c: Vec<Vec<f64>> = serde_json::from_value(j["covariance"].clone()).unwrap();
    assert!((c[0][0] / 4.0 - 1.0).abs() < 0.15, "{c:?}");
    assert!((c[1][1] - 1.0).abs() < 0.15, "{c:?}");
    assert!(c[0][1].abs() < 0.15, "{c:?}");
    let rows = fs::read_to_string(out.join("ensemble.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 4001);
}

#[test]
fn diagnose_reports_the_orthonormal_bundle_rank() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["diagnose"],
        r#"{"manifold": "sphere", "x0": [1.2, 0.3]}"#,
    );
    assert!(o.status.success());
    let j = read_json(&out.join("hormander.json"));
    // Brackets from an orthonormal frame span the orthonormal bundle (dim 3),
    // not all of the frame bundle.
    assert_eq!(j["hormander_rank"], 3);
    assert_eq!(j["frame_bundle_dim"], 6);
    assert_eq!(j["bracket_generating"], false);
    assert_eq!(j["curvature_map_rank"], 1);
    assert_eq!(j["curvature_map_injective"], true);
}

#[test]
fn geodesic_and_mpp_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["mpp"],
        r#"{"manifold": "euclidean(2)", "x0": [0.0, 0.0], "frame": [[2.0, 0.0], [0.5, 1.0]],
            "target": [1.0, 1.0], "shooting": {"path_steps": 10}}"#,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("mpp.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let vals: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
    assert!(
        (vals[1] - 1.0).abs() < 1e-8 && (vals[2] - 1.0).abs() < 1e-8,
        "{last}"
    );

    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["geodesic"],
        r#"{"manifold": "sphere", "x0": [1.5707963267948966, 0.0], "target": [1.5707963267948966, 0.8]}"#,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&out.join("geodesic.json"));
    assert!((j["length"].as_f64().unwrap() - 0.8).abs() < 1e-6, "{j}");
}

#[test]
fn generate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(
        dir.path(),
        &["generate"],
        r#"{"manifold": "euclidean(2)", "x0": [0.5, -0.5], "frame": [[1.0, 0.0], [0.0, 0.5]],
            "n_paths": 30, "steps": 2, "horizon": 1.0, "seed": 4}"#,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = out.join("dataset.csv");
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 31);

    let est_dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"manifold": "euclidean(2)", "dataset": {}, "estimator": {{"emit_paths": false}}}}"#,
        serde_json::to_string(data.to_str().unwrap()).unwrap()
    );
    let (o, out) = run(est_dir.path(), &["estimate"], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&out.join("estimate.json"));
    assert_eq!(j["n_points"], 30);
    assert!(out.join("trace.csv").exists());
    assert!(!out.join("mpp").exists());
}
