use std::fs;
use std::path::Path;
use std::process::Command;

use hystab::example::GOLDEN_P;
use hystab::local::certificate_from_json;
use serde_json::Value;

fn hystab(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_hystab")).args(args).output().expect("binary runs");
    out.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p).unwrap().lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn synth_writes_certificate_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(hystab(&["synth", "--plant", "example", "--theta", "0.1", "--out-dir", out]), 0);
    let text = fs::read_to_string(dir.path().join("certificate.json")).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert!(doc["W"].is_array() && doc["H"].is_array() && doc["margins"]["pass"] == true);
    certificate_from_json(&text).unwrap();
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["config"]["theta"], 0.1);
    assert!(manifest["versions"]["hystab"].is_string());
}

#[test]
fn verify_only_accepts_reference_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(hystab(&["export-instance", "--out-dir", out]), 0);
    let golden = dir.path().join("golden.json");
    let cert = certificate_from_json(&fs::read_to_string(&golden).unwrap()).unwrap();
    let p = cert.p().unwrap();
    assert!((p[(0, 0)] - GOLDEN_P[0][0]).abs() < 1e-9);
    let code = hystab(&[
        "synth",
        "--plant",
        "example",
        "--theta",
        "0.1",
        "--verify-only",
        "--cert",
        golden.to_str().unwrap(),
        "--out-dir",
        out,
    ]);
    assert_eq!(code, 0);
    let margins = read_json(&dir.path().join("margins.json"));
    assert_eq!(margins["pass"], true);
    assert_eq!(margins["d_interpretation"], "derived");
}

#[test]
fn verify_only_reports_failure_under_alternative_reading() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(hystab(&["export-instance", "--out-dir", out]), 0);
    let golden = dir.path().join("golden.json");
    let code = hystab(&[
        "synth",
        "--verify-only",
        "--cert",
        golden.to_str().unwrap(),
        "--d-reading",
        "listed-as-g+d",
        "--out-dir",
        out,
    ]);
    assert_eq!(code, 2);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"theta\": 0.1, ").unwrap();
    assert_eq!(hystab(&["synth", "--config", bad.to_str().unwrap()]), 3);
    fs::write(&bad, r#"{"theta": 0.1, "unknown-key": 1}"#).unwrap();
    assert_eq!(hystab(&["synth", "--config", bad.to_str().unwrap()]), 3);
    assert_eq!(hystab(&["synth", "--plant", "pendulum"]), 3);
    assert_eq!(hystab(&["simulate", "--q0", "3,1"]), 3);
    assert_eq!(hystab(&["simulate", "--frobnicate"]), 3);
    assert_eq!(hystab(&["synth", "--verify-only"]), 3);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("o");
    fs::write(&cfg, format!(r#"{{"x0": [0.0, 0.0], "q0": "1,1", "horizon": 50.0, "out-dir": "{}"}}"#, out.display()))
        .unwrap();
    assert_eq!(hystab(&["simulate", "--config", cfg.to_str().unwrap(), "--T", "2"]), 0);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["horizon"], 2.0);
    assert_eq!(manifest["config"]["q0"], "1,1");
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["metrics"]["total_jumps"], 0);
    assert_eq!(metrics["metrics"]["termination"], "converged");
}

#[test]
fn simulate_reports_single_switch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        hystab(&["simulate", "--plant", "example", "--x0", "2,0", "--q0", "2,1", "--T", "15", "--out-dir", out]),
        0
    );
    let m = read_json(&dir.path().join("metrics.json"));
    assert_eq!(m["metrics"]["total_jumps"], 1);
    let t = m["metrics"]["first_switch_time"].as_f64().unwrap();
    assert!((t - 3.9).abs() < 0.5, "{t}");
    let text = fs::read_to_string(dir.path().join("arc.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,j,x1,x2,q1,q2,u");
    let row = text.lines().nth(1).unwrap();
    let x1 = row.split(',').nth(2).unwrap();
    assert_eq!(x1.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
}

#[test]
fn sweep_is_deterministic_and_ordered() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let code = hystab(&[
            "simulate",
            "--sweep",
            "4",
            "--box",
            "-3,3",
            "--seed",
            "5",
            "--T",
            "15",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for i in 0..4 {
        let f = format!("arcs/arc_{i:04}.csv");
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
    }
    assert_eq!(fs::read(a.path().join("sweep.json")).unwrap(), fs::read(b.path().join("sweep.json")).unwrap());
    let s = read_json(&a.path().join("sweep.json"));
    assert_eq!(s["runs"], 4);
    assert_eq!(s["settled"], 4);
    let idx: Vec<u64> = s["arcs"].as_array().unwrap().iter().map(|e| e["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, vec![0, 1, 2, 3]);
}

#[test]
fn export_sets_samples() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hystab(&["export-sets", "--out-dir", dir.path().to_str().unwrap()]), 0);
    let p = GOLDEN_P;
    for r in csv_rows(&dir.path().join("ellipse.csv")) {
        let v = p[0][0] * r[0] * r[0] + 2.0 * p[0][1] * r[0] * r[1] + p[1][1] * r[1] * r[1];
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }
    let curve = csv_rows(&dir.path().join("attractor.csv"));
    let r = (2.0f64 * 0.1 / (4.0 * 0.5 * 0.7)).sqrt();
    assert!((curve[0][0] + r).abs() < 1e-9 && (curve.last().unwrap()[0] - r).abs() < 1e-9);
    assert!((r - 0.37789).abs() < 1e-4);
    assert_eq!(csv_rows(&dir.path().join("hull.csv")).len(), 4);
    assert_eq!(csv_rows(&dir.path().join("box.csv")).len(), 5);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn instance_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hystab(&["export-instance", "--theta", "0.05", "--out-dir", dir.path().to_str().unwrap()]), 0);
    let inst = read_json(&dir.path().join("instance.json"));
    assert_eq!(inst["theta"], 0.05);
    assert_eq!(inst["k1"], 0.5);
    assert!(!dir.path().join("golden.json").exists());
}
