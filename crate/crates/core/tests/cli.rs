use std::path::Path;
use std::process::Command;

use micp::cli_io::{
    parse_config, preset, read_snapshot, render_snapshot, render_timeseries, Field,
};
use micp::schedule::Experiment;
use micp::MicpError;
use proptest::prelude::*;

fn micp(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_micp")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn preset_alone_equals_builtin() {
    for e in [Experiment::Ex1, Experiment::Ex2, Experiment::Ex3] {
        let parsed = parse_config(&format!("preset = \"{}\"", e.name())).unwrap();
        assert_eq!(parsed, preset(e));
    }
}

#[test]
fn printed_preset_parses_back() {
    let cfg = preset(Experiment::Ex3);
    assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn override_merges_into_preset() {
    let cfg = parse_config("preset = \"ex1\"\n[rock]\neta = 2.5\n").unwrap();
    assert_eq!(cfg.rock.eta, 2.5);
    assert_eq!(cfg.rock.k_0, preset(Experiment::Ex1).rock.k_0);
    assert_eq!(cfg.domain, preset(Experiment::Ex1).domain);
}

#[test]
fn user_schedule_replaces_builtin() {
    let text = r#"
preset = "ex1"
[schedule]
periods = [
  { end_time = 3600.0, rate = 1e-5, c_m = 0.01, c_o = 0.0, c_u = 0.0, label = "microbial" },
  { end_time = 7200.0, rate = 1e-5, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "water_push" },
  { end_time = 9000.0, rate = 0.0, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "no_flow" },
  { end_time = 9600.0, rate = 1e-5, c_m = 0.0, c_o = 0.04, c_u = 0.0, label = "growth" },
  { end_time = 9700.0, rate = 1e-5, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "water_push" },
  { end_time = 9800.0, rate = 0.0, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "no_flow" },
  { end_time = 9900.0, rate = 1e-5, c_m = 0.0, c_o = 0.0, c_u = 300.0, label = "cementation" },
  { end_time = 9950.0, rate = 1e-5, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "water_push" },
  { end_time = 10000.0, rate = 0.0, c_m = 0.0, c_o = 0.0, c_u = 0.0, label = "no_flow" },
]
"#;
    let cfg = parse_config(text).unwrap();
    assert!(cfg.schedule.builtin.is_none());
    assert_eq!(cfg.schedule.resolve().unwrap().end_time(), 10000.0);
}

#[test]
fn misspelled_key_is_rejected() {
    let err = parse_config("preset = \"ex1\"\n[rock]\netta = 2.5\n").unwrap_err();
    assert!(matches!(err, MicpError::Config(_)));
    assert!(err.to_string().contains("etta"), "{err}");
}

#[test]
fn invalid_values_are_all_reported() {
    let err = parse_config("preset = \"ex1\"\n[rock]\neta = -1.0\n[solver]\ndt_cut = 2.0\n").unwrap_err();
    match err {
        MicpError::Validation(v) => assert!(v.len() >= 2, "{v:?}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn snapshot_roundtrip_is_exact_and_deterministic() {
    let grid = preset(Experiment::Ex2).build_grid().unwrap();
    let values: Vec<f64> = (0..grid.n_active()).map(|i| (i as f64 * 0.1).sin() / 3.0).collect();
    let fields = [Field { name: "K", values: &values }];
    let a = render_snapshot(&grid, &fields, 1.5).unwrap();
    let b = render_snapshot(&grid, &fields, 1.5).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vtk");
    std::fs::write(&path, &a).unwrap();
    let back = read_snapshot(&grid, &path).unwrap();
    assert_eq!(back.time, 1.5);
    assert_eq!(back.field("K").unwrap(), values.as_slice());
    let other = preset(Experiment::Ex1).build_grid().unwrap();
    assert!(read_snapshot(&other, &path).is_err());
}

#[test]
fn timeseries_rejects_time_going_backwards() {
    assert!(render_timeseries(&["time", "v"], &[vec![2.0, 0.0], vec![1.0, 0.0]]).is_err());
    assert!(render_timeseries(&["time", "v"], &[vec![1.0]]).is_err());
}

proptest! {
    #[test]
    fn csv_keeps_every_bit(v in prop::collection::vec(-1e300f64..1e300, 1..20)) {
        let rows: Vec<Vec<f64>> = v.iter().enumerate().map(|(i, x)| vec![i as f64, *x]).collect();
        let text = render_timeseries(&["time", "v"], &rows).unwrap();
        for (line, row) in text.lines().skip(1).zip(&rows) {
            let parsed: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            prop_assert_eq!(&parsed, row);
        }
    }

    #[test]
    fn edited_config_roundtrips(eta in 1.0f64..5.0, k_a in 1e-8f64..1e-5, dt in 1.0f64..600.0) {
        let mut cfg = preset(Experiment::Ex2);
        cfg.rock.eta = eta;
        cfg.kinetics.k_a = k_a;
        cfg.solver.dt_init = dt;
        prop_assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn preset_command_prints_parsable_config() {
    let (code, stdout, _) = micp(&["preset", "ex2"]);
    assert_eq!(code, 0);
    assert_eq!(parse_config(&stdout).unwrap(), preset(Experiment::Ex2));
    assert_eq!(micp(&["preset", "ex9"]).0, 2);
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(micp(&["run-micp"]).0, 2);
    assert_eq!(micp(&["frobnicate"]).0, 2);
    assert_eq!(micp(&["run-micp", "/nonexistent/config.toml"]).0, 2);
}

#[test]
fn missing_snapshot_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"ex1\"\n");
    let missing = dir.path().join("none.vtk");
    let (code, _, stderr) = micp(&["run-co2", &cfg, "--perm-from", missing.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("kind=snapshot"), "{stderr}");
}

#[test]
fn run_micp_prints_ledger_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"ex1\"\n");
    let out = dir.path().join("out");
    let (code, stdout, stderr) = micp(&["run-micp", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("ledger closure"));
    assert!(out.join("micp_final.vtk").exists());
    assert!(out.join("micp_series.csv").exists());
}

#[test]
fn run_co2_reads_rock_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"ex2\"\n[co2]\nduration = 172800.0\n");
    let grid = preset(Experiment::Ex2).build_grid().unwrap();
    let perm: Vec<f64> = grid.cells.iter().map(|c| 0.5 * c.perm0).collect();
    let phi: Vec<f64> = grid.cells.iter().map(|c| c.poro0).collect();
    let fields = [Field { name: "K", values: &perm }, Field { name: "phi", values: &phi }];
    let snapshot = dir.path().join("rock.vtk");
    std::fs::write(&snapshot, render_snapshot(&grid, &fields, 0.0).unwrap()).unwrap();
    let out = dir.path().join("out");
    let (code, stdout, stderr) = micp(&[
        "run-co2",
        &cfg,
        "--perm-from",
        snapshot.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("leakage"));
    assert!(out.join("co2_leakage.csv").exists());
    assert!(out.join("co2_final.vtk").exists());

    let wrong = dir.path().join("wrong.vtk");
    let ex1 = preset(Experiment::Ex1).build_grid().unwrap();
    let k1 = vec![1e-14; ex1.n_active()];
    std::fs::write(&wrong, render_snapshot(&ex1, &[Field { name: "K", values: &k1 }], 0.0).unwrap()).unwrap();
    assert_eq!(micp(&["run-co2", &cfg, "--perm-from", wrong.to_str().unwrap()]).0, 2);
}

#[test]
fn solver_failure_exits_with_three_and_keeps_last_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"ex1\"\n[solver]\nmax_newton = 1\ndt_init = 600.0\ndt_min = 600.0\n",
    );
    let out = dir.path().join("out");
    let (code, _, stderr) = micp(&["run-micp", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("kind=solver"));
    assert!(out.join("micp_failed.vtk").exists());
}

#[test]
fn dt_init_flag_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"ex1\"\n");
    assert_eq!(micp(&["run-micp", &cfg, "--dt-init", "-5"]).0, 2);
}
