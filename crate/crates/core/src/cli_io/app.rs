//! Command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::{load_config, preset, Format, SimulationConfig};
use super::output::{read_snapshot, write_snapshot, write_timeseries, Field};
use super::verify::run_verify;
use crate::co2_assessment::{
    simulate_co2, Co2Problem, Co2Report, Co2Sink, RockFields, TwoPhaseState,
};
use crate::error::{MicpError, Result};
use crate::grid::Grid;
use crate::kinetics::RockLaw;
use crate::micp_solver::{
    simulate_micp, MicpProblem, MicpSink, MicpState, RunFailure, RunReport, StepRecord, C_M, C_O,
    C_U, P, PHI_B, PHI_C, SPECIES,
};
use crate::schedule::Experiment;

#[derive(Parser, Debug)]
#[command(name = "micp", version, about = "MICP leakage-sealing simulator")]
struct Cli {
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Initial time step in seconds (overrides the configuration).
    #[arg(long, global = true)]
    dt_init: Option<f64>,
    /// Seed for the randomized checks of `verify`.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the MICP treatment of a configuration.
    RunMicp { config: PathBuf },
    /// Run the CO₂ leakage assessment, optionally on a treated rock field.
    RunCo2 {
        config: PathBuf,
        /// Snapshot whose `K` and `phi` fields replace the initial rock.
        #[arg(long)]
        perm_from: Option<PathBuf>,
    },
    /// Run the invariant and oracle checks.
    Verify,
    /// Print a built-in configuration.
    Preset { name: String },
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Per-cell output fields of an MICP state.
pub fn micp_fields(grid: &Grid, rocks: &[RockLaw], state: &MicpState) -> Vec<(String, Vec<f64>)> {
    let col = |k: usize| state.cells.iter().map(|c| c[k]).collect::<Vec<_>>();
    let perm = state.permeability(rocks);
    let ratio = perm.iter().zip(&grid.cells).map(|(k, c)| k / c.perm0).collect();
    vec![
        ("phi".into(), state.porosity(rocks)),
        ("K".into(), perm),
        ("K_ratio".into(), ratio),
        ("phi_b".into(), col(PHI_B)),
        ("phi_c".into(), col(PHI_C)),
        ("c_m".into(), col(C_M)),
        ("c_o".into(), col(C_O)),
        ("c_u".into(), col(C_U)),
        ("p".into(), col(P)),
    ]
}

fn write_fields(grid: &Grid, fields: &[(String, Vec<f64>)], time: f64, path: &Path) -> Result<()> {
    let view: Vec<Field> = fields
        .iter()
        .map(|(name, values)| Field { name, values })
        .collect();
    write_snapshot(grid, &view, time, path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MicpError::io(dir, e))
}

/// Smallest `K / K_0` over the leak cells, or over all cells without a leak.
pub fn min_leak_perm_ratio(grid: &Grid, rocks: &[RockLaw], state: &MicpState) -> f64 {
    let perm = state.permeability(rocks);
    let leak: Vec<usize> = grid.leak_cells().collect();
    let cells: Box<dyn Iterator<Item = usize>> = if leak.is_empty() {
        Box::new(0..grid.n_active())
    } else {
        Box::new(leak.into_iter())
    };
    cells
        .map(|c| perm[c] / grid.cells[c].perm0)
        .fold(f64::INFINITY, f64::min)
}

struct FileSink<'a> {
    grid: &'a Grid,
    rocks: &'a [RockLaw],
    dir: Option<PathBuf>,
    interval: Option<f64>,
    count: usize,
    records: Vec<StepRecord>,
    /// Period end times still to report on stderr; empty when quiet.
    progress: Vec<(f64, String)>,
    total_periods: usize,
}

impl MicpSink for FileSink<'_> {
    fn snapshot_interval(&self) -> Option<f64> {
        self.interval
    }
    fn snapshot(&mut self, time: f64, state: &MicpState) -> Result<()> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("micp_{:04}.vtk", self.count));
            write_fields(self.grid, &micp_fields(self.grid, self.rocks, state), time, &path)?;
        }
        self.count += 1;
        Ok(())
    }
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.records.push(record.clone());
        if let Some((end, label)) = self.progress.first() {
            if record.time >= *end {
                let done = self.total_periods + 1 - self.progress.len();
                eprintln!(
                    "period {done}/{} ({label}) done at {:.1} h, {} steps",
                    self.total_periods,
                    record.time / 3600.0,
                    self.records.len()
                );
                self.progress.remove(0);
            }
        }
        Ok(())
    }
}

pub const MICP_SERIES_HEADER: [&str; 8] = [
    "time",
    "dt",
    "iterations",
    "residual",
    "well_pressure",
    "min_perm_ratio",
    "calcite_mass",
    "biofilm_mass",
];

fn record_row(r: &StepRecord) -> Vec<f64> {
    vec![
        r.time,
        r.dt,
        r.iterations as f64,
        r.residual,
        r.well_pressure,
        r.min_perm_ratio,
        r.calcite_mass,
        r.biofilm_mass,
    ]
}

/// Outcome of [`run_micp`].
pub struct MicpRun {
    pub grid: Grid,
    pub rocks: Vec<RockLaw>,
    pub report: RunReport,
    pub records: Vec<StepRecord>,
}

/// Builds the grid, runs the schedule and writes the configured outputs to
/// `out` (nothing is written when `out` is `None`). On a hard failure the
/// last good state is written to `micp_failed.vtk`.
pub fn run_micp(config: &SimulationConfig, out: Option<&Path>) -> Result<MicpRun> {
    let grid = config.build_grid()?;
    let schedule = config.schedule.resolve()?;
    let params = &config.kinetics;
    let initial = MicpState::initial(&grid, params);
    let problem = MicpProblem::new(
        &grid,
        params,
        &config.rock,
        MicpProblem::scales_for(&schedule, &initial),
        config.solver.execution,
    )?;
    let vtk = config.outputs.formats.contains(&Format::Vtk);
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let mut sink = FileSink {
        grid: &grid,
        rocks: &problem.rocks,
        dir: out.filter(|_| vtk).map(Path::to_path_buf),
        interval: Some(config.outputs.snapshot_every).filter(|d| *d > 0.0),
        count: 0,
        records: Vec::new(),
        progress: if config.outputs.progress {
            schedule
                .periods()
                .iter()
                .map(|p| (p.end_time, format!("{:?}", p.label)))
                .collect()
        } else {
            Vec::new()
        },
        total_periods: schedule.periods().len(),
    };
    let result = simulate_micp(&problem, &schedule, initial, &config.solver, &mut sink);
    let records = std::mem::take(&mut sink.records);
    if let Some(dir) = out {
        if config.outputs.formats.contains(&Format::Csv) {
            let rows: Vec<Vec<f64>> = records.iter().map(record_row).collect();
            write_timeseries(&MICP_SERIES_HEADER, &rows, &dir.join("micp_series.csv"))?;
        }
    }
    let report = match result {
        Ok(r) => r,
        Err(RunFailure {
            source,
            time,
            last_good,
        }) => {
            if let Some(dir) = out {
                let fields = micp_fields(&grid, &problem.rocks, &last_good);
                write_fields(&grid, &fields, time, &dir.join("micp_failed.vtk"))?;
            }
            return Err(MicpError::SolverFailure {
                time,
                source: Box::new(source),
            });
        }
    };
    if let Some(dir) = out {
        let fields = micp_fields(&grid, &problem.rocks, &report.final_state);
        write_fields(&grid, &fields, report.final_time, &dir.join("micp_final.vtk"))?;
    }
    let rocks = problem.rocks.clone();
    drop(problem);
    Ok(MicpRun {
        grid,
        rocks,
        report,
        records,
    })
}

struct Co2FileSink<'a> {
    grid: &'a Grid,
    dir: Option<PathBuf>,
    interval: Option<f64>,
    count: usize,
}

impl Co2Sink for Co2FileSink<'_> {
    fn snapshot_interval(&self) -> Option<f64> {
        self.interval
    }
    fn snapshot(&mut self, time: f64, state: &TwoPhaseState) -> Result<()> {
        if let Some(dir) = &self.dir {
            let p: Vec<f64> = state.cells.iter().map(|c| c[0]).collect();
            let fields = vec![("p".to_string(), p), ("s_co2".to_string(), state.saturation())];
            let path = dir.join(format!("co2_{:04}.vtk", self.count));
            write_fields(self.grid, &fields, time, &path)?;
        }
        self.count += 1;
        Ok(())
    }
}

pub const CO2_SERIES_HEADER: [&str; 4] = ["time", "leakage_flux", "cumulative_flux", "co2_in_place"];

/// Runs the CO₂ assessment on `rock` (the untreated rock when `None`).
pub fn run_co2(
    config: &SimulationConfig,
    grid: &Grid,
    rock: Option<RockFields>,
    out: Option<&Path>,
) -> Result<Co2Report> {
    let rock = rock.unwrap_or_else(|| RockFields::initial(grid));
    let problem = Co2Problem::new(grid, &config.twophase, rock, config.co2.solver.execution)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let vtk = config.outputs.formats.contains(&Format::Vtk);
    let mut sink = Co2FileSink {
        grid,
        dir: out.filter(|_| vtk).map(Path::to_path_buf),
        interval: Some(config.outputs.snapshot_every).filter(|d| *d > 0.0),
        count: 0,
    };
    let report = simulate_co2(&problem, &config.co2, &mut sink)?;
    if let Some(dir) = out {
        if config.outputs.formats.contains(&Format::Csv) {
            let rows: Vec<Vec<f64>> = report
                .series
                .iter()
                .map(|s| vec![s.time, s.flux, s.cumulative, s.in_place])
                .collect();
            write_timeseries(&CO2_SERIES_HEADER, &rows, &dir.join("co2_leakage.csv"))?;
        }
        if vtk {
            let st = &report.final_state;
            let p: Vec<f64> = st.cells.iter().map(|c| c[0]).collect();
            let fields = vec![("p".to_string(), p), ("s_co2".to_string(), st.saturation())];
            write_fields(grid, &fields, config.co2.duration, &dir.join("co2_final.vtk"))?;
        }
    }
    Ok(report)
}

/// Rock fields from the `K` and `phi` fields of a snapshot.
pub fn rock_from_snapshot(grid: &Grid, path: &Path) -> Result<RockFields> {
    let snap = read_snapshot(grid, path)?;
    let get = |name: &str| {
        snap.field(name).map(<[f64]>::to_vec).ok_or_else(|| MicpError::Parse {
            path: path.to_path_buf(),
            message: format!("snapshot has no `{name}` field"),
        })
    };
    Ok(RockFields {
        perm: get("K")?,
        poro: get("phi")?,
    })
}

fn fail_line(kind: &str, err: &dyn std::fmt::Display) {
    let msg = err.to_string().replace('\n', " | ");
    eprintln!("error: kind={kind} message=\"{msg}\"");
}

fn print_ledger(report: &RunReport) {
    let led = &report.ledger;
    println!(
        "ledger water: injected {:.6e} m3, produced {:.6e} m3, relative error {:.3e}",
        led.water.injected,
        led.water.produced,
        led.water.relative_error()
    );
    for (name, s) in SPECIES.iter().zip(&led.species) {
        println!(
            "ledger {name}: in place {:.6e} kg, injected {:.6e}, produced {:.6e}, reacted {:.6e}, relative error {:.3e}",
            s.current,
            s.injected,
            s.produced,
            s.reacted,
            s.relative_error()
        );
    }
    println!(
        "ledger closure: max relative error {:.3e}, clamped mass {:.3e} kg",
        led.max_relative_error(),
        report.clamped.iter().sum::<f64>()
    );
}

fn apply_overrides(config: &mut SimulationConfig, cli: &Cli) -> std::result::Result<(), String> {
    if let Some(dt) = cli.dt_init {
        config.solver.dt_init = dt;
        config.co2.solver.dt_init = dt;
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let load = |path: &Path| -> std::result::Result<SimulationConfig, i32> {
        let mut config = load_config(path).map_err(|e| {
            fail_line("config", &e);
            EXIT_USAGE
        })?;
        apply_overrides(&mut config, &cli).map_err(|e| {
            fail_line("config", &e);
            EXIT_USAGE
        })?;
        Ok(config)
    };
    match &cli.command {
        Command::Preset { name } => match name.parse::<Experiment>() {
            Ok(e) => {
                print!("preset = \"{}\"\n\n{}", e.name(), preset(e).to_toml());
                0
            }
            Err(e) => {
                fail_line("usage", &e);
                EXIT_USAGE
            }
        },
        Command::Verify => {
            if run_verify(cli.seed) {
                0
            } else {
                1
            }
        }
        Command::RunMicp { config } => {
            let config = match load(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = cli.out.clone().unwrap_or_else(|| config.outputs.dir.clone());
            match run_micp(&config, Some(&out)) {
                Ok(run) => {
                    print_ledger(&run.report);
                    println!(
                        "steps {} (failed {}), newton iterations {}, wall time {:.3} s",
                        run.report.steps,
                        run.report.failed_steps,
                        run.report.newton_iterations,
                        run.report.wall_time
                    );
                    println!(
                        "min K/K0 in leak: {:.6}",
                        min_leak_perm_ratio(&run.grid, &run.rocks, &run.report.final_state)
                    );
                    0
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::RunCo2 { config, perm_from } => {
            let config = match load(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let grid = match config.build_grid() {
                Ok(g) => g,
                Err(e) => {
                    fail_line("input", &e);
                    return EXIT_USAGE;
                }
            };
            let rock = match perm_from {
                Some(path) => match rock_from_snapshot(&grid, path) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        fail_line("snapshot", &e);
                        return EXIT_USAGE;
                    }
                },
                None => None,
            };
            let out = cli.out.clone().unwrap_or_else(|| config.outputs.dir.clone());
            match run_co2(&config, &grid, rock, Some(&out)) {
                Ok(report) => {
                    println!(
                        "co2 volume: injected {:.6e} m3, in place {:.6e}, produced {:.6e}, relative error {:.3e}",
                        report.injected,
                        report.in_place,
                        report.produced,
                        report.relative_volume_error()
                    );
                    println!(
                        "leakage: peak normalized flux {:.6e}, time-integrated {:.6e} s",
                        report.peak_flux(),
                        report.cumulative_flux()
                    );
                    println!(
                        "steps {} (failed {}), wall time {:.3} s",
                        report.steps, report.failed_steps, report.wall_time
                    );
                    0
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}

/// Solver breakdowns exit with 3, bad input with 2.
fn exit_for(e: &MicpError) -> i32 {
    if e.is_solver_failure() {
        fail_line("solver", e);
        EXIT_SOLVER
    } else {
        fail_line("input", e);
        EXIT_USAGE
    }
}
