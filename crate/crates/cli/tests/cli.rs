use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ks_core::field::read_field;

fn ks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ks")).args(args).env("KS_LOG", "error").output().unwrap()
}

fn single_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/single.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_field_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ks(&["synth-field", "--config", s(&single_config()), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read(a.join("field.txt")).unwrap();
    assert_eq!(text, fs::read(b.join("field.txt")).unwrap());
    let (field, seed) = read_field::<f64>(&a.join("field.txt")).unwrap();
    assert_eq!(seed, 3);
    for (x, g) in field.expansion.centers().iter().zip(&field.values) {
        assert!((field.expansion.evaluate(x).unwrap() - g).abs() <= 1e-8);
    }

    let c = dir.path().join("c");
    let o = ks(&["synth-field", "--config", s(&single_config()), "--out", s(&c), "--seed", "4"]);
    assert!(o.status.success());
    assert_ne!(text, fs::read(c.join("field.txt")).unwrap());
}

#[test]
fn corrupted_artifact_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = ks(&["synth-field", "--config", s(&single_config()), "--out", s(dir.path())]);
    assert!(o.status.success());
    let path = dir.path().join("field.txt");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[4] = "1.0 not-a-number 2.0 3.0".into();
    fs::write(&path, lines.join("\n")).unwrap();

    let config = fs::read_to_string(single_config()).unwrap().replace("grid_points = 12", "grid_points = 12\nartifact = \"field.txt\"");
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, config).unwrap();
    let o = ks(&["run", "--config", s(&cfg_path), "--out", s(&dir.path().join("run"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = fs::read_to_string(single_config()).unwrap().replace("epsilon_bar = 0.05", "");
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, config).unwrap();
    let o = ks(&["run", "--config", s(&cfg_path), "--out", s(&dir.path().join("run"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("epsilon_bar"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    let config = fs::read_to_string(single_config())
        .unwrap()
        .replace("resolutions = [1.0, 0.5]", "resolutions = [0.5, 1.0]")
        .replace("fill_resolution = 0.1", "fill_resolution = -1.0");
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, config).unwrap();
    let o = ks(&["run", "--config", s(&cfg_path), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("strictly decreasing") && err.contains("fill_resolution"), "{err}");
}

#[test]
fn single_agent_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ks(&["run", "--config", s(&single_config()), "--out", s(&out), "--parallel", "off"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,t,mean_basis_count,max_fill_distance,sup_error,exchanges_cum");
    assert!(metrics.lines().count() >= 2);
    for f in ["exchanges.csv", "agent_steps.csv", "error_surface.csv", "centers_agent_1.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_writes_one_directory_per_factor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = ks(&["sweep", "--config", s(&single_config()), "--out", s(&out), "--factors", "1,1/2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("c_1.0000/metrics.csv").exists());
    assert!(out.join("c_0.5000/metrics.csv").exists());

    let run = dir.path().join("run");
    assert!(ks(&["run", "--config", s(&single_config()), "--out", s(&run)]).status.success());
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(out.join("c_1.0000/metrics.csv")).unwrap());
}

#[test]
fn tune_and_pe_check_report() {
    let o = ks(&["tune-epsilon", "--config", s(&single_config()), "--budget", "30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("epsilon_bar = "));

    let o = ks(&["pe-check", "--config", s(&single_config())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap() > 0.0));
}
