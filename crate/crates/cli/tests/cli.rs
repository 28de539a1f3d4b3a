use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use twospeed::fit::{Gains, PiecewiseLinearLaw};
use twospeed_cli::config::{Config, CostName, Scenario, SourceName, PAPER_DEFAULT};
use twospeed_cli::error::{EXIT_CONFIG, EXIT_IO, EXIT_VERIFICATION};

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

fn twospeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twospeed")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &Config) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run_with(cfg: &Config, dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let config = write_config(dir, cfg);
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    twospeed(&args)
}

/// Small grid whose slow zone still has a few velocity rows.
fn fit_sized() -> Config {
    let mut cfg = Config::from_toml(SMOKE).unwrap();
    cfg.grid.n_x = 41;
    cfg.grid.n_v = 101;
    cfg.grid.n_u1 = 11;
    cfg.termination.target_half_width_x = 0.0075;
    cfg.termination.target_half_width_v = 0.01;
    cfg
}

#[test]
fn smoke_solve_is_quick_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::from_toml(SMOKE).unwrap();
    let t = Instant::now();
    let o = run_with(&cfg, tmp.path(), "solve", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.elapsed().as_secs_f64() < 1.0, "took {:?}", t.elapsed());
    for f in ["quadratic.hcdp", "quadratic_table.csv", "quadratic_report.toml"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f} missing");
    }
}

#[test]
fn invalid_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = Config::from_toml(SMOKE).unwrap();
    cfg.grid.n_u1 = 6;
    let o = run_with(&cfg, tmp.path(), "solve", &[]);
    assert_eq!(o.status.code(), Some(i32::from(EXIT_CONFIG)));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, SMOKE.replace("[grid]", "[grid]\nspeed = 1")).unwrap();
    let o = twospeed(&["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(i32::from(EXIT_CONFIG)));
}

#[test]
fn missing_snapshot_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::from_toml(SMOKE).unwrap();
    let missing = tmp.path().join("nowhere.hcdp");
    let o = run_with(&cfg, tmp.path(), "fit", &["--snapshot", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(i32::from(EXIT_IO)));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.hcdp"));
}

#[test]
fn destabilising_law_exits_with_verification_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = Config::from_toml(SMOKE).unwrap();
    cfg.verify.n_x = 3;
    cfg.verify.n_v = 3;
    let law = PiecewiseLinearLaw {
        threshold: 0.02,
        u1_max: 0.02,
        gains_1: Gains::new(0.12, -0.5),
        gains_2: Gains::new(0.13, 0.05),
    };
    let path = tmp.path().join("law.toml");
    std::fs::write(&path, law.to_toml().unwrap()).unwrap();
    let o = run_with(&cfg, tmp.path(), "verify", &["--law", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(i32::from(EXIT_VERIFICATION)), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("out/verify_report.toml").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(twospeed(&["integrate"]).status.code(), Some(2));
}

#[test]
fn fit_warns_on_a_min_time_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fit_sized();
    cfg.cost.kind = CostName::MinTime;
    let o = run_with(&cfg, tmp.path(), "solve", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snap = tmp.path().join("out/min_time.hcdp");
    let o = run_with(&cfg, tmp.path(), "fit", &["--snapshot", snap.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_then_simulate_from_the_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fit_sized();
    cfg.simulation.t_final = 1.0;
    cfg.simulation.field_n = 5;
    cfg.simulation.scenarios = vec![Scenario {
        name: "origin".into(),
        x: 0.0,
        v: 0.0,
        source: SourceName::Law,
        u1: None,
        mode: None,
    }];
    for cmd in ["solve", "fit", "simulate"] {
        let o = run_with(&cfg, tmp.path(), cmd, &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = tmp.path().join("out");
    let law = std::fs::read_to_string(out.join("law.toml")).unwrap();
    PiecewiseLinearLaw::<f64>::from_toml(&law).unwrap();
    let summary: toml::Value = std::fs::read_to_string(out.join("simulate_summary.toml")).unwrap().parse().unwrap();
    let origin = &summary["scenario"][0];
    assert_eq!(origin["settled_at"].as_float(), Some(0.0));
    assert_eq!(origin["accumulated_cost"].as_float(), Some(0.0));
}

#[test]
fn shipped_config_round_trips() {
    let cfg = Config::from_toml(PAPER_DEFAULT).unwrap();
    cfg.validate().unwrap();
    assert_eq!(Config::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    assert_eq!((cfg.grid.n_x, cfg.grid.n_v, cfg.grid.n_u1), (501, 501, 51));
}
