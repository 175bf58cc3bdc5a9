use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vstar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn series(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn lightcone_matches_the_closed_form() {
    let out = vstar(&["lightcone", "--lambda", "0.01"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    let rows = v["rows"].as_array().unwrap();
    assert!(close(rows[0]["v0_deformed"].as_f64().unwrap(), 0.1, 1e-12));
    for r in rows {
        let s = r["spatial_norm"].as_f64().unwrap();
        let v0 = r["v0_deformed"].as_f64().unwrap();
        assert!(close(v0, (0.01 + s * s).sqrt(), 1e-10), "s = {s}: {v0}");
        assert!(close(r["v0_classical"].as_f64().unwrap(), s, 0.0));
    }

    let out = vstar(&["lightcone", "--lambda", "0.04", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# schema_version: 1\nspatial_norm,v0_classical,v0_deformed\n"));
    let row = text.lines().find(|l| l.starts_with("0.3,")).expect("row at 0.3");
    let v0: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!(close(v0, 0.13f64.sqrt(), 1e-10));
}

#[test]
fn lightcone_without_deformation_is_classical() {
    let out = vstar(&["lightcone", "--lambda", "0", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(2) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(close(cols[1], cols[2], 1e-12), "{line}");
    }
}

#[test]
fn lightcone_needs_lambda() {
    let out = vstar(&["lightcone"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distance_examples() {
    let v = json(&vstar(&["distance", "--point", "1,0,0,0"]));
    let e = series(&v["expectation"]);
    assert!(close(e[0], 1.0, 1e-12) && close(e[1], -1.0, 1e-12) && close(e[2], 0.0, 1e-12));
    let var = series(&v["variance"]);
    assert!(close(var[0], 0.0, 1e-12) && close(var[1], 2.0, 1e-12) && close(var[2], 2.0, 1e-12));
    assert_eq!(v["causal_class_formal"], "timelike");

    let v = json(&vstar(&["distance", "--point", "0,0,0,0"]));
    let e = series(&v["expectation"]);
    assert!(close(e[0], 0.0, 1e-12) && close(e[1], -1.0, 1e-12));
    assert_eq!(v["causal_class_formal"], "spacelike");

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "euclid.json",
        r#"{"n": 4, "point": [1, 0, 0, 0],
            "observable": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#,
    );
    let v = json(&vstar(&["--config", &cfg, "distance"]));
    let e = series(&v["expectation"]);
    assert!(close(e[0], 1.0, 1e-12) && close(e[1], 2.0, 1e-12));
}

#[test]
fn distance_at_lambda_sums_the_series() {
    let v = json(&vstar(&["distance", "--point", "1,0,0,0", "--lambda", "0.5"]));
    assert!(close(v["expectation_at_lambda"].as_f64().unwrap(), 0.5, 1e-12));
    assert!(close(v["variance_at_lambda"].as_f64().unwrap(), 1.5, 1e-12));
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("unknown.json", r#"{"n": 4, "bogus": 1}"#),
        ("version.json", r#"{"n": 4, "schema_version": 7}"#),
        ("point.json", r#"{"n": 4, "point": [1, 2, 3]}"#),
        ("order.json", r#"{"n": 4, "N_lambda": 99}"#),
        ("syntax.json", "{ n: 4"),
    ] {
        let cfg = write_config(dir.path(), name, body);
        let out = vstar(&["--config", &cfg, "distance"]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = vstar(&["--config", "/nonexistent/vstar.json", "distance"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn delta_state_positivity_violation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "delta.json",
        r#"{"n": 2, "state": "delta", "point": [0.1, 0.2]}"#,
    );
    let out = vstar(&["--config", &cfg, "check", "positivity"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["pass"], false);
    assert!(v["failing_sample"].is_object());
}

#[test]
fn coherent_state_positivity_passes() {
    let out = vstar(&["check", "positivity", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["pass"], true);
}

#[test]
fn jacobi_separates_the_constructions() {
    let dir = tempfile::tempdir().unwrap();
    let naive = write_config(
        dir.path(),
        "naive.json",
        r#"{"n": 4, "theta": {"kind": "radial_scaled", "r": 1, "eps": 0.5}, "star_mode": "general_vertical"}"#,
    );
    let out = vstar(&["--config", &naive, "check", "jacobi"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["pass"], false);

    let good = write_config(
        dir.path(),
        "commuting.json",
        r#"{"n": 4, "theta": {"kind": "commuting_compact", "r": 1, "eps": 0.5}}"#,
    );
    let out = vstar(&["--config", &good, "check", "jacobi"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn every_check_passes_on_the_default_product() {
    for which in [
        "assoc",
        "vertical",
        "flip",
        "hermitean",
        "uncertainty",
        "pair-consistency",
    ] {
        let out = vstar(&["check", which, "--seed", "1"]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{which}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        let v = json(&out);
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["pass"], true);
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ball.json",
        r#"{"n": 2, "theta": {"kind": "ball_compact", "r": 1, "eps": 0.5}, "samples": {"count": 20, "seed": 11}}"#,
    );
    let mut files = Vec::new();
    for (i, format) in ["json", "json", "csv", "csv"].iter().enumerate() {
        let path = dir.path().join(format!("out{i}.{format}"));
        let out = vstar(&[
            "--config",
            &cfg,
            "--out",
            path.to_str().unwrap(),
            "--format",
            format,
            "check",
            "assoc",
        ]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[2], files[3]);
    assert!(files[2].starts_with(b"# schema_version: 1\n"));

    let other = dir.path().join("other.json");
    vstar(&[
        "--config",
        &cfg,
        "--seed",
        "12",
        "--out",
        other.to_str().unwrap(),
        "check",
        "assoc",
    ]);
    assert_ne!(std::fs::read(other).unwrap(), files[0]);
}

#[test]
fn pairs_demo_vanishes_beyond_the_support() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pairs.json",
        r#"{"n": 2, "theta": {"kind": "commuting_compact", "r": 1, "eps": 0.5}}"#,
    );
    let out = vstar(&["--config", &cfg, "pairs-demo"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["pass"], true);

    let out = vstar(&[
        "--config",
        &cfg,
        "pairs-demo",
        "--pair",
        "0,0,0,0",
        "--pair",
        "5,0,-5,0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let pairs = json(&out)["pairs"].as_array().unwrap().clone();
    assert_eq!(pairs.len(), 2);

    let out = vstar(&["--config", &cfg, "pairs-demo", "--pair", "1,2,3"]);
    assert_eq!(out.status.code(), Some(2));
}
