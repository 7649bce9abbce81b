use std::path::Path;
use std::process::{Command, Output};

fn ergocell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergocell"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn hjb_config(dir: &Path) -> String {
    let path = dir.join("hjb.json");
    let text = r#"{
        "env": {"kind": "cosine", "dimension": 1, "value_range": [1.0, 3.0], "phase": 0.0},
        "model": {"type": "hjb", "c1": 1.0, "gamma": 2.0},
        "points": [[0.0], [3.0]],
        "l_list": [1.0, 2.0, 4.0],
        "seeds": [7],
        "eta": {"mode": "fixed", "eta": 0.1},
        "reference": {"method": "oracle", "quad_n": 1024},
        "nodes_per_unit": 16
    }"#;
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(ergocell(&["--help"]).status.code(), Some(0));
    assert_eq!(ergocell(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ergocell(&[]).status.code(), Some(1));
    assert_eq!(ergocell(&["hbar"]).status.code(), Some(1));
    assert_eq!(ergocell(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn missing_config_exits_three() {
    let out = ergocell(&["hbar", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"env": 3}"#).unwrap();
    let out = ergocell(&["hbar", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn wrong_model_kind_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hjb_config(dir.path());
    assert_eq!(ergocell(&["fbar", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn hbar_prints_one_line_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hjb_config(dir.path());
    let out = ergocell(&["hbar", "--config", &cfg]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    // min of 2 + cos is 1
    assert!((lines[0]["value"].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn study_then_rate_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hjb_config(dir.path());
    let csv = dir.path().join("rows.csv");
    let out = ergocell(&[
        "study",
        "--config",
        &cfg,
        "--out",
        csv.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("rows.json").exists());

    let again = ergocell(&[
        "study",
        "--config",
        &cfg,
        "--out",
        csv.to_str().unwrap(),
        "--resume",
    ]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), text);

    let fit = ergocell(&["rate-fit", csv.to_str().unwrap()]);
    assert_eq!(
        fit.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&fit.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!(v["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn gen_env_writes_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("env.json");
    std::fs::write(
        &spec,
        r#"{"kind": "checkerboard", "dimension": 2, "value_range": [1.0, 2.0], "mollify_radius": 0.2}"#,
    )
    .unwrap();
    let field = dir.path().join("v.bin");
    let out = ergocell(&[
        "gen-env",
        "--config",
        spec.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        field.to_str().unwrap(),
        "--nodes",
        "16",
        "--box",
        "4",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let f = ergocell::grid::GridField::load(&field).unwrap();
    assert_eq!(f.values.len(), 256);
    assert!(f.values.iter().all(|v| (1.0..=2.0).contains(v)));
}

#[test]
fn validate_passes() {
    let out = ergocell(&["validate"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .all(|l| l.starts_with("PASS")));
}
