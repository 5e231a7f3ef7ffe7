use std::path::Path;
use std::process::{Command, Output};

use mvsde_cli::{preset, run_experiment, CliError, ExperimentConfig, PRESETS};

const SMALL: &str = r#"
name = "smoke"
experiment = "density"
seed = 7
t_end = 0.2
x0 = "normal(0, 1)"
h = [0.01]
n = [12]
observe = [0.1, 0.2]
moment_every = 5

[model]
name = "double-well"

[[schemes]]
kind = "ssm"
enforce_h_constraint = false

[[schemes]]
kind = "taming-out"
"#;

fn mvsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsde")).args(args).output().expect("binary runs")
}

fn field_of(e: CliError) -> String {
    match e {
        CliError::ConfigInvalid { field, .. } => field,
        other => panic!("expected ConfigInvalid, got {other}"),
    }
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn small_config_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("smoke.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("out");
    let o = mvsde(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = read_dir(&out).into_iter().map(|(n, _)| n).collect();
    for want in ["summary.json", "manifest.toml", "verify.json", "moments_ssm.csv", "density_ssm_t0p2.csv"] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schemes"]["ssm"]["completed"], true);
    let moments = std::fs::read_to_string(out.join("moments_ssm.csv")).unwrap();
    // t = 0, 0.05, ..., 0.2
    assert_eq!(moments.lines().count(), 1 + 5);
}

#[test]
fn stepsize_must_divide_the_lattice() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.h_fine = Some(0.02);
    cfg.h = vec![0.03];
    assert_eq!(field_of(cfg.validate().unwrap_err()), "h");
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.observe = vec![0.105];
    assert_eq!(field_of(cfg.validate().unwrap_err()), "observe");
}

#[test]
fn enforced_stepsize_bound_names_the_scheme() {
    let cfg = preset("dw-rmse", false).unwrap().with_override("schemes.0.enforce_h_constraint=true").unwrap();
    assert_eq!(field_of(cfg.validate().unwrap_err()), "schemes[0].enforce_h_constraint");
    let o = mvsde(&["describe", "dw-rmse", "--set", "schemes.0.enforce_h_constraint=true"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schemes[0].enforce_h_constraint"));
}

#[test]
fn unknown_preset_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let o = mvsde(&["run", "no-such-preset", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text = format!("{SMALL}\nbogus = 1\n");
    assert_eq!(field_of(ExperimentConfig::from_toml(&text).unwrap_err()), "config");
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("smoke.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(mvsde(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    let manifest = a.join("manifest.toml");
    assert!(mvsde(&["run", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(read_dir(&a), read_dir(&b));
}

#[test]
fn seed_changes_the_output() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let other = cfg.with_override("seed=8").unwrap();
    let (a, b) = (run_experiment(&cfg).unwrap(), run_experiment(&other).unwrap());
    assert_ne!(a.text("moments_ssm.csv"), b.text("moments_ssm.csv"));
}

#[test]
fn phase_tracks_cover_every_step() {
    let cfg = preset("vdp2d", false).unwrap().with_override("n=[50]").unwrap();
    let r = run_experiment(&cfg).unwrap();
    let track = r.text("track_ssm_n50.csv").expect("track file");
    let mut lines = track.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("time,mean_x1,mean_x2"), "{header}");
    // t = 0, 0.01, ..., 12
    assert_eq!(lines.count(), 1201);
}

#[test]
fn list_and_describe() {
    let o = mvsde(&["list-presets"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for (name, _) in PRESETS {
        assert!(text.contains(name));
    }
    let o = mvsde(&["describe", "poc", "--seed", "3", "--set", "model.d=3"]);
    assert!(o.status.success());
    let shown = String::from_utf8(o.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&shown).unwrap();
    assert_eq!((cfg.seed, cfg.model.d), (3, 3));
}

#[test]
fn verify_model_reports_failures_without_error() {
    let o = mvsde(&["verify-model", "supermeasure-case1"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL one-sided-lipschitz"));
}
