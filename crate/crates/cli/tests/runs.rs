use signorini_cli::config::{ExperimentConfig, Stage};
use signorini_cli::manifest::{sha256_hex, RunManifest, StageStatus};
use signorini_cli::run::{run, RunOptions};
use signorini_cli::verify::{Lab, Tolerances};
use std::path::Path;
use std::process::Command;

fn opts(dir: &Path, deterministic: bool) -> RunOptions {
    RunOptions {
        out: dir.to_path_buf(),
        threads: None,
        deterministic,
        command: "test".into(),
    }
}

fn small(scenario: &str) -> ExperimentConfig {
    ExperimentConfig {
        scenario: scenario.into(),
        nodes: 65,
        ..Default::default()
    }
}

#[test]
fn solve_and_monitor_give_plateau_profile() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&small("laplace-exact"), &[Stage::Monitor], &opts(dir.path(), false)).unwrap();
    assert!(m.passed(), "{m:?}");
    let names: Vec<&str> = m.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["solve", "monitor"]);
    let mut rdr = csv::Reader::from_path(dir.path().join("profile.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["r", "H", "D", "I", "G", "psi", "sigma", "M", "J", "N", "Ntilde", "W"]);
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let r: f64 = rec[0].parse().unwrap();
        let nt: f64 = rec[10].parse().unwrap();
        if (0.1..=0.5).contains(&r) {
            assert!((nt - 1.5).abs() < 0.05, "Ñ({r}) = {nt}");
            seen += 1;
        }
    }
    assert!(seen > 5);
    for f in &m.files {
        let bytes = std::fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
    }
    assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
}

#[test]
fn unknown_scenario_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = ExperimentConfig {
        scenario: "no-such-scenario".into(),
        ..Default::default()
    };
    assert!(run(&cfg, &[Stage::Solve], &opts(&out, false)).is_err());
    assert!(!out.exists());
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let cfg = small("lipschitz-perturbed");
    let stages = [Stage::Monitor, Stage::Blowup, Stage::Fb];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run(&cfg, &stages, &opts(a.path(), true)).unwrap();
    let mb = run(&cfg, &stages, &opts(b.path(), true)).unwrap();
    assert_eq!(ma.files, mb.files);
    assert!(ma.files.iter().any(|f| f.path == "gamma_points.csv"));
    assert_eq!(ma.config_sha256, cfg.sha256());
}

#[test]
fn stage_failure_recorded_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("laplace-exact");
    cfg.monitor.r_min_steps = 1000.0;
    let m = run(&cfg, &[Stage::Monitor], &opts(dir.path(), false)).unwrap();
    assert!(!m.passed());
    assert_eq!(m.stages[0].status, StageStatus::Passed);
    assert_eq!(m.stages[1].status, StageStatus::Failed);
    assert!(m.stages[1].error.is_some());
    assert!(dir.path().join("solution.csv").exists());
    assert!(m.files.iter().any(|f| f.path == "solution.csv"));
}

#[test]
fn broken_tolerance_fails_the_criterion() {
    let mut tol = Tolerances::quick();
    tol.plateau_band = [1.0, 1.01];
    let lab = Lab::new(signorini_cli::verify::Scale::quick(), tol);
    let r = lab.run(2);
    assert!(!r.passed);
    assert!(r.line().contains("FAIL"));
    assert!(Lab::quick().run(2).passed);
}

#[test]
fn binary_exit_status_follows_checks() {
    let exe = env!("CARGO_BIN_EXE_signorini");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    std::fs::write(
        &cfg,
        r#"{"verify":{"quick":true,"criteria":[2],"tolerances":{"plateau_band":[1.0,1.01]}}}"#,
    )
    .unwrap();
    let out = Command::new(exe)
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion  2 FAIL"), "{stdout}");
    assert!(dir.path().join("v/verify.json").exists());

    std::fs::write(&cfg, r#"{"scenario":"nope"}"#).unwrap();
    let out = Command::new(exe).args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(exe).arg("defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    ExperimentConfig::from_json(&text).unwrap();
}
