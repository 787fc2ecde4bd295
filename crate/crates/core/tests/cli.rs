use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--window.W", "50", "--window.burn_in", "50", "--theta_grid.count", "5", "--pde.T", "8", "--pde.snapshots", "4"];

fn homog(args: &[&str], out: &Path, extra_env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homog"));
    cmd.args(args).arg("--output").arg(out);
    for (k, v) in extra_env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn unknown_override_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = homog(&["effective-h", "--pde.nope", "1"], dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pde.nope"));
}

#[test]
fn malformed_config_file_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"beta": 1.0, "unexpected_key": 3}"#).unwrap();
    let out = homog(&["effective-h", "--config", cfg.to_str().unwrap()], dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sample_env_writes_a_hashed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = homog(&["sample-env", "--seed", "7", "--env.half_width", "20"], dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "sample-env");
    assert_eq!(manifest["package"], "homog");
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 1);
    let name = files[0]["name"].as_str().unwrap();
    assert_eq!(name, "env_seed7.csv");
    let body = read(dir.path(), name);
    assert!(body.starts_with("# seed=7 dx=0.01"));
    assert_eq!(files[0]["sha256"].as_str().unwrap(), homog::harness::sha256_hex(body.as_bytes()));
    assert_eq!(files[0]["rows"].as_u64().unwrap() as usize, body.lines().count() - 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = homog(&with_small(&["sweep", "--vary", "beta", "--values", ""]), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir.path(), "sweep.csv"), "beta,seed,theta,lambda,provenance\n");
    let out = homog(&["sweep", "--vary", "window.nope", "--values", ""], dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_over_beta_has_one_curve_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = homog(&with_small(&["sweep", "--vary", "beta", "--values", "0.1,0.5,2.0"]), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    for beta in ["0.1", "0.5", "2.0"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').next() == Some(beta)).count(), 5);
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = with_small(&["effective-h", "--seeds", "[3,4]"]);
    assert!(homog(&args, a.path(), &[("HJH_THREADS", "1")]).status.success());
    assert!(homog(&args, b.path(), &[("HJH_THREADS", "3")]).status.success());
    for name in ["curves.csv", "summary.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
    let curves = read(a.path(), "curves.csv");
    assert!(curves.starts_with("seed,theta,lambda,provenance"));
    assert_eq!(curves.lines().count(), 1 + 2 * 5);
}

#[test]
fn corrector_and_pde_commands_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = homog(&with_small(&["corrector", "--theta", "1.5"]), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value = serde_json::from_str(&read(dir.path(), "certificate_seed42.json")).unwrap();
    assert_eq!(cert["report"]["pass"], true);
    assert!(read(dir.path(), "lower_seed42.csv").starts_with("x,f,residual"));
    let out = homog(&with_small(&["pde", "--theta", "-1"]), dir.path(), &[]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let pde: serde_json::Value = serde_json::from_str(&read(dir.path(), "pde_seed42.json")).unwrap();
    assert!(pde["H_L"].as_f64().unwrap() <= pde["H_U"].as_f64().unwrap());
}

#[test]
fn xval_exit_code_follows_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_small(&["xval"]);
    args.extend(["--theta_grid.count", "3"]);
    let out = homog(&args, dir.path(), &[]);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    let pass = summary["pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if pass { 0 } else { 2 }));
    assert_eq!(read(dir.path(), "xval.csv").lines().count(), 4);
}
