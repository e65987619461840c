//! Configuration, presets, file output and the command-line front end.

mod app;
mod config;
mod output;
mod verify;

pub use app::{
    cli_main, micp_fields, min_leak_perm_ratio, rock_from_snapshot, run_co2, run_micp, MicpRun,
    CO2_SERIES_HEADER, EXIT_SOLVER, EXIT_USAGE, MICP_SERIES_HEADER,
};
pub use config::{
    load_config, parse_config, preset, Format, OutputSettings, ScheduleConfig, SimulationConfig,
    PRESET_P_BDRY,
};
pub use output::{
    read_snapshot, render_snapshot, render_timeseries, write_snapshot, write_timeseries, Field,
    SnapshotData,
};
pub use verify::run_verify;
