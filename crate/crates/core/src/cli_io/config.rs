//! TOML configuration with experiment presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::co2_assessment::{Co2Settings, TwoPhaseParams};
use crate::error::{MicpError, Result};
use crate::grid::{build_domain, Axis, DomainSpec, Grid, Layout, LeakSpec, ReservoirSpec};
use crate::kinetics::{KineticParams, RockLaw};
use crate::micp_solver::SolverSettings;
use crate::schedule::{
    builtin_schedule, Experiment, Period, Schedule, EX2_RATE,
};

/// Either a built-in schedule or an explicit list of periods.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<Period>>,
}

impl ScheduleConfig {
    pub fn resolve(&self) -> Result<Schedule> {
        match (&self.builtin, &self.periods) {
            (Some(e), None) => Ok(builtin_schedule(*e)),
            (None, Some(p)) => Schedule::new(p.clone()),
            (Some(_), Some(_)) => Err(MicpError::Config(
                "schedule: give either `builtin` or `periods`, not both".into(),
            )),
            (None, None) => Err(MicpError::Config(
                "schedule: one of `builtin` or `periods` is required".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Vtk,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
    /// Simulated seconds between snapshots; `0` writes only the final state.
    pub snapshot_every: f64,
    pub formats: Vec<Format>,
    /// Report each finished schedule period on stderr.
    pub progress: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_every: 0.0,
            formats: vec![Format::Vtk, Format::Csv],
            progress: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub domain: DomainSpec,
    pub leak: LeakSpec,
    pub layout: Layout,
    #[serde(default)]
    pub rock: RockLaw,
    #[serde(default)]
    pub kinetics: KineticParams,
    #[serde(default)]
    pub twophase: TwoPhaseParams,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub co2: Co2Settings,
    #[serde(default)]
    pub outputs: OutputSettings,
}

impl SimulationConfig {
    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.domain.validate();
        v.extend(self.leak.validate(self.domain.extents()[1]));
        v.extend(self.rock.validate());
        v.extend(self.kinetics.validate());
        v.extend(self.twophase.validate());
        v.extend(self.solver.validate());
        v.extend(self.co2.validate());
        if let Err(e) = self.schedule.resolve() {
            v.push(e.to_string());
        }
        if !(self.outputs.snapshot_every >= 0.0) {
            v.push(format!(
                "outputs.snapshot_every must be non-negative, got {}",
                self.outputs.snapshot_every
            ));
        }
        let lay = &self.layout;
        for (k, val) in [("H_lower", lay.h_lower), ("h", lay.h), ("H_upper", lay.h_upper)] {
            if !(val >= 0.0) {
                v.push(format!("layout.{k} must be non-negative, got {val}"));
            }
        }
        v
    }

    pub fn reservoir(&self) -> ReservoirSpec {
        ReservoirSpec {
            layout: self.layout.clone(),
            rock: self.rock,
        }
    }

    pub fn build_grid(&self) -> Result<Grid> {
        build_domain(&self.domain, &self.leak, &self.reservoir())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

/// Hydrostatic reference pressure at the base of every preset domain, Pa.
pub const PRESET_P_BDRY: f64 = 1.0e7;

/// Built-in configuration of an experiment.
pub fn preset(experiment: Experiment) -> SimulationConfig {
    let rock = RockLaw::default();
    let k_a = rock.k_0;
    match experiment {
        Experiment::Ex1 => SimulationConfig {
            domain: DomainSpec {
                x: Axis(vec![(100, 1.0)]),
                y: Axis(vec![(1, 1.0)]),
                z: Axis(vec![(1, 1.0)]),
                gravity: [0.0, 0.0, -9.81],
            },
            // A 5 m zone centred 15 m from the well.
            leak: LeakSpec {
                anchor_x: 15.0,
                a: 5.0,
                w: 1.0,
                y_center: 0.5,
                theta: 90.0,
                g_l: 15.0,
                g_u: 5.0,
                l: 15.0,
                k_l: 2.0 * k_a,
            },
            layout: Layout {
                h_lower: 1.0,
                h: 0.0,
                h_upper: 0.0,
                well_x: 0.5,
                well_y: 0.5,
                p_bdry: PRESET_P_BDRY,
            },
            rock,
            kinetics: KineticParams::default(),
            twophase: TwoPhaseParams::default(),
            schedule: ScheduleConfig {
                builtin: Some(Experiment::Ex1),
                periods: None,
            },
            solver: SolverSettings::default(),
            co2: Co2Settings {
                plane_z: 0.5,
                ..Co2Settings::default()
            },
            outputs: OutputSettings::default(),
        },
        Experiment::Ex2 | Experiment::Ex3 => {
            let three_d = experiment == Experiment::Ex3;
            // Fine columns around the leak, coarse towards the far boundary.
            let x = Axis(vec![(50, 0.7), (13, 5.0)]);
            let (y, w, y_center) = if three_d {
                (Axis(vec![(2, 3.5), (3, 2.0), (2, 3.5)]), 6.0, 10.0)
            } else {
                (Axis(vec![(1, 1.0)]), 1.0, 0.5)
            };
            // dx + dz stays below a / sin(45°) so the stair-step leak is
            // face connected.
            let z = Axis(vec![(5, 1.0), (30, 20.0 / 30.0), (5, 1.0)]);
            SimulationConfig {
                domain: DomainSpec {
                    x,
                    y,
                    z,
                    gravity: [0.0, 0.0, -9.81],
                },
                leak: LeakSpec {
                    anchor_x: 30.0,
                    a: 1.0,
                    w,
                    y_center,
                    theta: 135.0,
                    g_l: 15.0,
                    g_u: 5.0,
                    l: 15.0,
                    k_l: 2.0 * k_a,
                },
                layout: Layout {
                    h_lower: 5.0,
                    h: 20.0,
                    h_upper: 5.0,
                    well_x: 0.35,
                    well_y: y_center,
                    p_bdry: PRESET_P_BDRY,
                },
                rock,
                kinetics: KineticParams::default(),
                twophase: TwoPhaseParams::default(),
                schedule: ScheduleConfig {
                    builtin: Some(experiment),
                    periods: None,
                },
                solver: SolverSettings::default(),
                co2: Co2Settings {
                    rate: EX2_RATE,
                    plane_z: 5.0,
                    ..Co2Settings::default()
                },
                outputs: OutputSettings::default(),
            }
        }
    }
}

/// Merges `over` into `base`; nested tables merge key by key, everything
/// else (including arrays) is replaced.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // A user schedule replaces the preset one wholesale, so
            // `periods` never ends up next to a preset `builtin`.
            (Some(Value::Table(b)), Value::Table(o)) if k != "schedule" => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a configuration. A top-level `preset = "ex1" | "ex2" | "ex3"`
/// supplies every value the text leaves out.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| MicpError::Config(e.to_string()))?;
    let resolved = match table.remove("preset") {
        Some(Value::String(name)) => {
            let exp: Experiment = name.parse()?;
            let mut base: Table = toml::from_str(&preset(exp).to_toml())
                .map_err(|e: toml::de::Error| MicpError::Config(e.to_string()))?;
            merge(&mut base, table);
            base
        }
        Some(other) => {
            return Err(MicpError::Config(format!(
                "preset must be a string, got {}",
                other.type_str()
            )))
        }
        None => table,
    };
    let config: SimulationConfig = Value::Table(resolved)
        .try_into()
        .map_err(|e: toml::de::Error| MicpError::Config(e.to_string()))?;
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(MicpError::Validation(problems));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| MicpError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        MicpError::Config(message) => MicpError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
