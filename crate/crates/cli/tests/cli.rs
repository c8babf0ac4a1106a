//! End-to-end checks of the binary: exit codes, artifact layout,
//! reproducibility of the written bytes, and the study verdicts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_polychaos")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("file readable")).expect("valid JSON")
}

/// Every artifact file in a run directory, keyed by relative path.
fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for name in ["manifest.json", "norms.csv"] {
        let p = dir.join(name);
        if p.exists() {
            out.insert(name.to_string(), fs::read(&p).unwrap());
        }
    }
    let fields = dir.join("fields");
    if fields.is_dir() {
        for entry in fs::read_dir(&fields).unwrap() {
            let entry = entry.unwrap();
            let name = format!("fields/{}", entry.file_name().to_string_lossy());
            out.insert(name, fs::read(entry.path()).unwrap());
        }
    }
    out
}

fn assert_no_absolute_paths(v: &serde_json::Value) {
    match v {
        serde_json::Value::String(s) => {
            assert!(!s.starts_with('/'), "absolute path in manifest: {s}");
        }
        serde_json::Value::Array(a) => a.iter().for_each(assert_no_absolute_paths),
        serde_json::Value::Object(m) => m.values().for_each(assert_no_absolute_paths),
        _ => {}
    }
}

#[test]
fn algebra_check_reports_all_identities() {
    let out = run(&["algebra-check"]);
    assert_eq!(exit_code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["overall_pass"], true);
    for (name, suite) in report["suites"].as_object().unwrap() {
        assert_eq!(suite["pass"], true, "suite {name} failed: {suite}");
    }
}

#[test]
fn corrupted_reference_is_caught() {
    let out = run(&["algebra-check", "--corrupt-binomial"]);
    assert_eq!(exit_code(&out), 1, "corrupted weights must fail the check");
    let report = stdout_json(&out);
    assert_eq!(report["overall_pass"], false);
    assert_eq!(report["suites"]["wick_reference"]["pass"], false);
    assert_eq!(report["suites"]["hermite_wick"]["pass"], true);
}

#[test]
fn empty_basis_is_a_config_error() {
    let out = run(&["algebra-check", "--basis-size", "0"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn missing_config_is_a_config_error() {
    let out = run(&["solve", "--config", "/nonexistent/run.toml"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut text = fs::read_to_string(repo_config("burgers1d.toml")).unwrap();
    text.push_str("\n[extra]\nknob = 1\n");
    fs::write(&path, text).unwrap();
    let out = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config error"), "stderr: {err}");
}

#[test]
fn solve_writes_manifest_fields_and_norms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve",
        "--config",
        repo_config("burgers1d.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_no_absolute_paths(&manifest);
    let coeffs = manifest["coefficients"].as_array().unwrap();
    assert_eq!(coeffs.len(), 15); // degree <= 2 over 4 indices
    let times = manifest["snapshot_times"].as_array().unwrap();
    assert_eq!(times.len(), 5);
    assert_eq!(times[0], 0.0);
    assert_eq!(times[4], 0.5);

    for row in manifest["files"]["fields"].as_array().unwrap() {
        for rel in row.as_array().unwrap() {
            let p = dir.path().join(rel.as_str().unwrap());
            assert!(p.is_file(), "missing field file {}", p.display());
        }
    }
    let norms = fs::read_to_string(dir.path().join("norms.csv")).unwrap();
    assert!(norms.starts_with("time,alpha,degree,h22,h2p,sup"));
    // one row per coefficient per snapshot, plus the header
    assert_eq!(norms.lines().count(), 1 + 5 * 15);
}

#[test]
fn reruns_are_byte_identical() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let cfg = repo_config("burgers1d.toml");
    for d in [&d1, &d2] {
        let out = run(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--serial",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0);
    }
    assert_eq!(artifact_bytes(d1.path()), artifact_bytes(d2.path()));
}

#[test]
fn parallel_and_serial_artifacts_agree() {
    let ds = tempfile::tempdir().unwrap();
    let dp = tempfile::tempdir().unwrap();
    let cfg = repo_config("burgers1d.toml");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--serial",
        "--out-dir",
        ds.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dp.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);

    let mut serial = artifact_bytes(ds.path());
    let mut parallel = artifact_bytes(dp.path());
    // the manifest records which lane ran; the numerical artifacts must not
    serial.remove("manifest.json");
    parallel.remove("manifest.json");
    assert_eq!(serial, parallel);
}

#[test]
fn restart_and_causality_studies_pass() {
    for (kind, file, key) in [
        ("restart", "study_restart.json", "max"),
        ("causality", "study_causality.json", "after_max"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&[
            "study",
            kind,
            "--config",
            repo_config("burgers1d.toml").to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(
            exit_code(&out),
            0,
            "{kind}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let verdict = read_json(&dir.path().join(file));
        assert_eq!(verdict["pass"], true, "{kind}: {verdict}");
        assert!(verdict[key].as_f64().is_some());
    }
}

#[test]
fn catalan_study_fits_a_finite_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "study",
        "catalan",
        "--config",
        repo_config("burgers1d.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = read_json(&dir.path().join("study_catalan.json"));
    assert_eq!(verdict["pass"], true);
    let b0 = verdict["b0"].as_f64().unwrap();
    assert!(b0.is_finite() && b0 > 0.0);
    assert!(verdict["min_slack_log"].as_f64().unwrap() >= -1e-12);
    let scaling = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    assert!(scaling.starts_with("alpha,degree,norm,weight_log,weighted_log,bound_log,slack_log"));
}

#[test]
fn rescaling_study_exit_matches_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "study",
        "rescaling",
        "--config",
        repo_config("burgers1d.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let verdict = read_json(&dir.path().join("study_rescaling.json"));
    let pass = verdict["pass"].as_bool().unwrap();
    assert_eq!(exit_code(&out), if pass { 0 } else { 1 });
    assert_eq!(verdict["weakly_decreasing"], true);
    let rows = verdict["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
}

fn linear_config(dir: &Path, paths: usize) -> PathBuf {
    let path = dir.join("linear.toml");
    let text = format!(
        r#"
model = "burgers1d"
seed = 42

[grid]
n = 64

[pde]
nu = 0.25

[time]
dt = 0.015625
t_end = 0.5

[basis]
time_basis = "haar"
n_time = 8
m_noise = 1

[truncation]
max_degree = 1
max_index = 8

[scaling]
q_scan = [1.1, 1.5, 2.0, 3.0]
eps_list = [0.5, 0.2, 0.1, 0.05]
p = 4.0

[noise]
g = [{{ kind = "sine", amp = 0.8, freq = 1 }}]

[initial]
kind = "sine"
amp = 0.0
freq = 1

[solver]
mode = "unbiased"

[outputs]
directory = "out/linear"
snapshots = 4
probes = [[0], [16], [32]]

[study]
paths = {paths}
"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn mc_compare_study_passes_in_the_linear_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = linear_config(dir.path(), 20_000);
    let out = run(&[
        "study",
        "mc-compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = read_json(&dir.path().join("study_mc_compare.json"));
    assert_eq!(verdict["pass"], true);
    assert!(verdict["max_z_variance"].as_f64().unwrap() <= 3.0);
    assert!(dir.path().join("mc_moments.csv").is_file());
    assert!(dir.path().join("chaos_moments.csv").is_file());
}

#[test]
fn mc_compare_rejects_nonlinear_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "study",
        "mc-compare",
        "--config",
        repo_config("burgers1d.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "degree-2 config must be rejected");
}

#[test]
fn planar_model_tracks_the_closed_form_decay() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve",
        "--config",
        repo_config("ns2d.toml").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.path().join("manifest.json"));
    let err = manifest["diagnostics"]["taylor_green_l2_error"]
        .as_f64()
        .unwrap();
    assert!(err <= 1e-6, "vortex decay error {err}");
}
