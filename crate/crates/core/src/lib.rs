//! Finite-volume simulation of microbially induced calcite precipitation
//! (MICP) for sealing leakage paths in a caprock, with an immiscible
//! CO₂/water model to assess the remaining leakage.

pub mod ad;
pub mod cli_io;
pub mod co2_assessment;
pub mod error;
pub mod exec;
pub mod grid;
pub mod kinetics;
pub mod linsolve;
pub mod micp_solver;
pub mod schedule;

pub use error::{MicpError, Result};
