use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qphase"))
        .args(args)
        .env("QPHASE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "model": {"model": "bitflip", "params": {"omega": 1.0, "gamma": 0.1}},
        "output_dir": dir.join("out"),
        "seed": 5,
        "stages": ["limit_cycle", "prc", "sde", "phase", "reconstruct"],
        "n_grid": 64,
        "n_theta": 64,
        "n_bins": 16,
        "phase_n_traj": 40,
        "phase_periods": 20
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn model_list_names_every_preset() {
    let out = qphase(&["model", "list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in qphase::models::PRESETS {
        assert!(text.contains(name), "{name} missing from listing");
    }
}

#[test]
fn malformed_json_is_a_usage_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"model\": \"qvdp\",\n  \"params\": {\"delta\": }\n}\n").unwrap();
    let out = qphase(&["limit-cycle", "--model", bad.to_str().unwrap(), "--out", dir.path().join("lc.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("column"), "{err}");
}

#[test]
fn unknown_preset_and_bad_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let lc = dir.path().join("lc.json");
    assert_eq!(qphase(&["limit-cycle", "--model", "nonexistent", "--out", lc.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(qphase(&["limit-cycle", "--bogus"]).status.code(), Some(2));
    assert_eq!(qphase(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_cycle_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("cold.json");
    fs::write(&model, r#"{"model": "spin1", "params": {"delta": 2.0, "gamma_plus": 0.01, "gamma_minus": 0.005}}"#).unwrap();
    let out = qphase(&["limit-cycle", "--model", model.to_str().unwrap(), "--n-grid", "64", "--out", dir.path().join("lc.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().to_lowercase().contains("no limit cycle"));
}

#[test]
fn pipeline_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = qphase(&["run", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["lc.json", "prc.csv", "sde.json", "hist.csv", "rho.json", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "ok");
    let f = report["metrics"]["fidelity"].as_f64().unwrap();
    assert!(f > 0.0 && f <= 1.0);

    fs::remove_file(b.join("hist.csv")).unwrap();
    let out = qphase(&["run", cfg.to_str().unwrap(), "--out-dir", b.to_str().unwrap(), "--resume"]);
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("hist.csv")).unwrap(), fs::read(b.join("hist.csv")).unwrap());
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let out = qphase(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["limit-cycle", "--model", "bitflip", "--n-grid", "64", "--out", &p("lc.json")]);
    ok(&["prc", "--lc", &p("lc.json"), "--n-theta", "64", "--out", &p("prc.csv")]);
    ok(&["build-sde", "--lc", &p("lc.json"), "--prc", &p("prc.csv"), "--out", &p("sde.json")]);
    ok(&["simulate-phase", "--sde", &p("sde.json"), "--n-traj", "20", "--seed", "1", "--n-bins", "16", "--out", &p("hist.csv")]);
    ok(&["reconstruct", "--hist", &p("hist.csv"), "--lc", &p("lc.json"), "--out", &p("rho.json")]);
    let out = ok(&["fidelity", "--a", &p("rho.json"), "--b", &p("rho.json")]);
    let f: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((f - 1.0).abs() < 1e-9);
    ok(&["wigner", "--rho", &p("rho.json"), "--kind", "spin-husimi", "--points", "11", "--out", &p("q.csv")]);
    let rows = fs::read_to_string(p("q.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 11 * 11);
    ok(&["simulate-sse", "--model", "bitflip", "--dt", "0.01", "--t-end", "0.1", "--seed", "2", "--out", &p("sse.csv")]);
    let head = fs::read_to_string(p("sse.csv")).unwrap();
    assert!(head.starts_with("traj,t,k,J"));
}

#[test]
fn unnormalized_density_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    fs::write(p("rho.json"), r#"{"n": 2, "re": [[0.7, 0.0], [0.0, 0.2]], "im": [[0.0, 0.0], [0.0, 0.0]]}"#).unwrap();
    let out = qphase(&["fidelity", "--a", &p("rho.json"), "--b", &p("rho.json")]);
    assert_eq!(out.status.code(), Some(2), "trace 0.9 must be rejected");
}
