//! Immiscible, incompressible CO₂/water flow on a frozen rock field.
//!
//! Linear relative permeabilities, no capillary pressure, phase-upwinded
//! mobilities. Unknowns per cell are `[p, s]` with `s` the CO₂ saturation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Real};
use crate::error::{MicpError, Result};
use crate::exec::{self, Execution};
use crate::grid::{Grid, Region};
use crate::linsolve::BlockSystem;
use crate::micp_solver::SolverSettings;

const P_SCALE: f64 = 1e5;
/// Largest saturation change allowed in one Newton update.
const MAX_DS: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhaseParams {
    pub rho_co2: f64,
    pub mu_co2: f64,
    pub rho_w: f64,
    pub mu_w: f64,
}

impl Default for TwoPhaseParams {
    fn default() -> Self {
        Self {
            rho_co2: 479.0,
            mu_co2: 3.95e-5,
            rho_w: 1045.0,
            mu_w: 2.54e-4,
        }
    }
}

impl TwoPhaseParams {
    pub fn validate(&self) -> Vec<String> {
        [
            ("rho_co2", self.rho_co2),
            ("mu_co2", self.mu_co2),
            ("rho_w", self.rho_w),
            ("mu_w", self.mu_w),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
        .map(|(k, v)| format!("twophase.{k} must be positive, got {v}"))
        .collect()
    }
}

/// Pressure and CO₂ saturation per active cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPhaseState {
    pub cells: Vec<[f64; 2]>,
}

impl TwoPhaseState {
    /// Fully water saturated, hydrostatic.
    pub fn initial(grid: &Grid, params: &TwoPhaseParams) -> Self {
        Self {
            cells: grid
                .cells
                .iter()
                .map(|c| [grid.hydrostatic(params.rho_w, &c.center), 0.0])
                .collect(),
        }
    }

    pub fn saturation(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c[1]).collect()
    }

    pub fn check(&self) -> Result<()> {
        for (i, c) in self.cells.iter().enumerate() {
            if !c[0].is_finite() || !(0.0..=1.0).contains(&c[1]) {
                return Err(MicpError::InvariantViolation(format!(
                    "cell {i}: p = {}, s = {}",
                    c[0], c[1]
                )));
            }
        }
        Ok(())
    }
}

/// Frozen permeability and porosity of every active cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RockFields {
    pub perm: Vec<f64>,
    pub poro: Vec<f64>,
}

impl RockFields {
    /// The grid's initial (untreated) rock.
    pub fn initial(grid: &Grid) -> Self {
        Self {
            perm: grid.cells.iter().map(|c| c.perm0).collect(),
            poro: grid.cells.iter().map(|c| c.poro0).collect(),
        }
    }
}

/// Fixed data for two-phase runs on one grid and rock field.
pub struct Co2Problem<'a> {
    pub grid: &'a Grid,
    pub params: &'a TwoPhaseParams,
    pub rock: RockFields,
    pub execution: Execution,
    trans: Vec<f64>,
    boundary_trans: Vec<f64>,
    well_weights: Vec<f64>,
    /// Cells whose water row is replaced by a pressure pin.
    pinned: Vec<bool>,
    system: BlockSystem,
}

struct Step<'s> {
    old: &'s TwoPhaseState,
    dt: f64,
    rate: f64,
}

impl<'a> Co2Problem<'a> {
    pub fn new(
        grid: &'a Grid,
        params: &'a TwoPhaseParams,
        rock: RockFields,
        execution: Execution,
    ) -> Result<Self> {
        let errors = params.validate();
        if !errors.is_empty() {
            return Err(MicpError::Validation(errors));
        }
        let n = grid.n_active();
        if n == 0 {
            return Err(MicpError::EmptyDomain);
        }
        if rock.perm.len() != n || rock.poro.len() != n {
            return Err(MicpError::Assembly(format!(
                "rock fields have {} / {} entries for {n} cells",
                rock.perm.len(),
                rock.poro.len()
            )));
        }
        if let Some(i) = rock.perm.iter().position(|k| !(*k > 0.0)) {
            return Err(MicpError::Domain(format!("cell {i}: permeability {}", rock.perm[i])));
        }
        if let Some(i) = rock.poro.iter().position(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(MicpError::Domain(format!("cell {i}: porosity {}", rock.poro[i])));
        }
        let trans = grid
            .faces
            .iter()
            .map(|f| crate::grid::face_transmissibility(grid, &rock.perm, f))
            .collect::<Result<Vec<_>>>()?;
        let boundary_trans = grid
            .boundary_faces
            .iter()
            .map(|b| b.area * rock.perm[b.cell] / b.half)
            .collect();
        let well_volume: f64 = grid.well_cells.iter().map(|&c| grid.cells[c].volume).sum();
        let mut well_weights = vec![0.0; n];
        for &c in &grid.well_cells {
            well_weights[c] = grid.cells[c].volume / well_volume;
        }
        // Without any open boundary the pressure level is free: pin one cell.
        // Its water balance follows from all other rows.
        let mut pinned: Vec<bool> = (0..n).map(|i| grid.is_isolated(i)).collect();
        if grid.boundary_faces.is_empty() {
            pinned[0] = true;
        }
        Ok(Self {
            grid,
            params,
            rock,
            execution,
            trans,
            boundary_trans,
            well_weights,
            pinned,
            system: BlockSystem::new(grid, 2, &[1.0, 1.0])?,
        })
    }

    fn mobilities<T: Real>(&self, s: T) -> [T; 2] {
        [(-s + 1.0) * (1.0 / self.params.mu_w), s * (1.0 / self.params.mu_co2)]
    }

    fn densities(&self) -> [f64; 2] {
        [self.params.rho_w, self.params.rho_co2]
    }

    /// Phase fluxes `[F_w, F_co2]` from cell a to cell b, m³/s.
    fn face_kernel<T: Real>(&self, f: usize, xa: [T; 2], xb: [T; 2]) -> [T; 2] {
        let (a, b) = self.grid.faces[f].cells;
        let ga = self.grid.gravity_potential(&self.grid.cells[a].center);
        let gb = self.grid.gravity_potential(&self.grid.cells[b].center);
        let (ma, mb) = (self.mobilities(xa[1]), self.mobilities(xb[1]));
        let rho = self.densities();
        std::array::from_fn(|ph| {
            let dphi = xa[0] - xb[0] + rho[ph] * (ga - gb);
            let lam = if dphi.value() >= 0.0 { ma[ph] } else { mb[ph] };
            lam * dphi * self.trans[f]
        })
    }

    /// Outward phase fluxes through a constant-pressure boundary face. The
    /// outside is water saturated and hydrostatic.
    fn boundary_kernel<T: Real>(&self, bf: usize, x: [T; 2]) -> [T; 2] {
        let face = &self.grid.boundary_faces[bf];
        let center = &self.grid.cells[face.cell].center;
        // Both sides sit at the cell centre height, so gravity drops out.
        let dphi = x[0] - self.grid.hydrostatic(self.params.rho_w, center);
        let inside = self.mobilities(x[1]);
        let outside = [1.0 / self.params.mu_w, 0.0];
        std::array::from_fn(|ph| {
            let lam = if dphi.value() >= 0.0 {
                inside[ph]
            } else {
                T::cst(outside[ph])
            };
            lam * dphi * self.boundary_trans[bf]
        })
    }

    fn cell_kernel<T: Real>(&self, step: &Step, i: usize, x: [T; 2]) -> [T; 2] {
        let v_phi_dt = self.grid.cells[i].volume * self.rock.poro[i] / step.dt;
        let old = step.old.cells[i];
        let ds = (x[1] - old[1]) * v_phi_dt;
        let water = if self.pinned[i] {
            (x[0] - old[0]) * (v_phi_dt / P_SCALE)
        } else {
            -ds
        };
        [water, ds - step.rate * self.well_weights[i]]
    }

    fn boundary_values(&self, x: &TwoPhaseState) -> Vec<[f64; 2]> {
        exec::map_indexed(self.execution, self.grid.boundary_faces.len(), |bf| {
            self.boundary_kernel::<f64>(bf, x.cells[self.grid.boundary_faces[bf].cell])
        })
    }

    /// Scaled residual and the Jacobian in block form.
    fn linearize(
        &self,
        step: &Step,
        x: &TwoPhaseState,
    ) -> (Vec<[f64; 2]>, crate::linsolve::BlockMatrix) {
        let grid = self.grid;
        let seed = |v: [f64; 2], off: usize| -> [Dual<4>; 2] {
            [Dual::var(v[0], off), Dual::var(v[1], off + 1)]
        };
        let faces: Vec<[Dual<4>; 2]> = exec::map_indexed(self.execution, grid.faces.len(), |f| {
            let (a, b) = grid.faces[f].cells;
            self.face_kernel(f, seed(x.cells[a], 0), seed(x.cells[b], 2))
        });
        let bounds: Vec<[Dual<2>; 2]> =
            exec::map_indexed(self.execution, grid.boundary_faces.len(), |bf| {
                let c = grid.boundary_faces[bf].cell;
                self.boundary_kernel(bf, [Dual::var(x.cells[c][0], 0), Dual::var(x.cells[c][1], 1)])
            });
        let scale = |i: usize| step.dt / (grid.cells[i].volume * self.rock.poro[i]);
        let cells: Vec<([f64; 2], [f64; 4])> = exec::map_indexed(self.execution, grid.n_active(), |i| {
            let out = self.cell_kernel(step, i, [Dual::<2>::var(x.cells[i][0], 0), Dual::var(x.cells[i][1], 1)]);
            let mut r = [out[0].re, out[1].re];
            let mut j = [out[0].eps[0], out[0].eps[1], out[1].eps[0], out[1].eps[1]];
            let skip_water = self.pinned[i];
            for &(f, sign) in &grid.cell_faces[i] {
                let off = if sign > 0.0 { 0 } else { 2 };
                for e in 0..2 {
                    if e == 0 && skip_water {
                        continue;
                    }
                    r[e] += sign * faces[f][e].re;
                    j[2 * e] += sign * faces[f][e].eps[off];
                    j[2 * e + 1] += sign * faces[f][e].eps[off + 1];
                }
            }
            for &bf in &grid.cell_boundaries[i] {
                for e in 0..2 {
                    if e == 0 && skip_water {
                        continue;
                    }
                    r[e] += bounds[bf][e].re;
                    j[2 * e] += bounds[bf][e].eps[0];
                    j[2 * e + 1] += bounds[bf][e].eps[1];
                }
            }
            let s = scale(i);
            (r.map(|v| v * s), j.map(|v| v * s))
        });
        let mut jac = self.system.zeros();
        let mut res = Vec::with_capacity(cells.len());
        for (i, (r, j)) in cells.into_iter().enumerate() {
            let d = self.system.diag(i);
            jac.values[d..d + 4].copy_from_slice(&j);
            res.push(r);
        }
        for (f, face) in grid.faces.iter().enumerate() {
            let (a, b) = face.cells;
            let (oab, oba) = self.system.off_diag(f, a, b);
            let (sa, sb) = (scale(a), scale(b));
            for e in 0..2 {
                if !self.pinned[a] || e == 1 {
                    jac.values[oab + 2 * e] = sa * faces[f][e].eps[2];
                    jac.values[oab + 2 * e + 1] = sa * faces[f][e].eps[3];
                }
                if !self.pinned[b] || e == 1 {
                    jac.values[oba + 2 * e] = -sb * faces[f][e].eps[0];
                    jac.values[oba + 2 * e + 1] = -sb * faces[f][e].eps[1];
                }
            }
        }
        (res, jac)
    }

    /// Advances `old` by `dt` with CO₂ injected at `rate` m³/s.
    pub fn solve_step(
        &self,
        old: &TwoPhaseState,
        dt: f64,
        rate: f64,
        settings: &SolverSettings,
    ) -> Result<(TwoPhaseState, usize)> {
        let step = Step { old, dt, rate };
        let mut x = old.clone();
        let mut norm = f64::INFINITY;
        for it in 0..=settings.max_newton {
            let (res, jac) = self.linearize(&step, &x);
            norm = res
                .iter()
                .flat_map(|r| r.iter())
                .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
            if !norm.is_finite() {
                break;
            }
            if it > 0 && norm < settings.newton_tol {
                return Ok((x, it));
            }
            if it == settings.max_newton {
                break;
            }
            let rhs: Vec<f64> = res.iter().flat_map(|r| [-r[0], -r[1]]).collect();
            let delta = self.system.solve(&jac, &rhs)?;
            exec::for_each_mut(self.execution, &mut x.cells, |i, c| {
                c[0] += delta[2 * i];
                let ds = delta[2 * i + 1].clamp(-MAX_DS, MAX_DS);
                c[1] = (c[1] + ds).clamp(0.0, 1.0);
            });
        }
        Err(MicpError::NonConvergence {
            iterations: settings.max_newton,
            residual: norm,
        })
    }

    /// CO₂ volume in place, m³.
    pub fn co2_in_place(&self, x: &TwoPhaseState) -> f64 {
        x.cells
            .iter()
            .enumerate()
            .map(|(i, c)| c[1] * self.rock.poro[i] * self.grid.cells[i].volume)
            .sum()
    }

    /// Net CO₂ outflow rate through the open boundary, m³/s.
    fn co2_outflow(&self, x: &TwoPhaseState) -> f64 {
        self.boundary_values(x).iter().map(|b| b[1]).sum()
    }

    /// Faces of the leak lying in the horizontal plane `plane_z`.
    pub fn leak_plane_faces(&self, plane_z: f64) -> Result<Vec<usize>> {
        let z = &self.grid.nodes[2];
        let (lo, hi) = (z[0], z[z.len() - 1]);
        if !(plane_z > lo && plane_z < hi) {
            return Err(MicpError::Geometry(format!(
                "plane z = {plane_z} m lies outside the interior ({lo}, {hi})"
            )));
        }
        let tol = 1e-9 * (hi - lo);
        let faces: Vec<usize> = self
            .grid
            .faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                let (a, b) = f.cells;
                f.axis == 2
                    && (f.center[2] - plane_z).abs() <= tol
                    && (self.grid.cells[a].region == Region::Leak
                        || self.grid.cells[b].region == Region::Leak)
            })
            .map(|(i, _)| i)
            .collect();
        if faces.is_empty() {
            return Err(MicpError::Geometry(format!(
                "plane z = {plane_z} m does not cut the leak along a cell face"
            )));
        }
        Ok(faces)
    }

    /// Upward CO₂ flux through the leak at `plane_z`, divided by
    /// `normalize_by`.
    pub fn leakage_flux(&self, x: &TwoPhaseState, plane_z: f64, normalize_by: f64) -> Result<f64> {
        if !(normalize_by > 0.0) {
            return Err(MicpError::Domain(format!(
                "normalization must be positive, got {normalize_by}"
            )));
        }
        let faces = self.leak_plane_faces(plane_z)?;
        Ok(self.plane_flux(x, &faces) / normalize_by)
    }

    fn plane_flux(&self, x: &TwoPhaseState, faces: &[usize]) -> f64 {
        faces
            .iter()
            .map(|&f| {
                let (a, b) = self.grid.faces[f].cells;
                // Faces are oriented from lower to higher cell index, which
                // along z is upward.
                self.face_kernel::<f64>(f, x.cells[a], x.cells[b])[1].max(0.0)
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Co2Settings {
    /// Injection rate, m³/s.
    pub rate: f64,
    /// Injection duration, s.
    pub duration: f64,
    /// Height of the horizontal monitoring plane, m.
    pub plane_z: f64,
    /// Flux normalization; the injection rate when absent.
    pub normalize_by: Option<f64>,
    pub solver: SolverSettings,
}

impl Default for Co2Settings {
    fn default() -> Self {
        Self {
            rate: 2.31e-4,
            duration: 30.0 * 86400.0,
            plane_z: 5.0,
            normalize_by: None,
            solver: SolverSettings {
                dt_max: 86400.0,
                ..SolverSettings::default()
            },
        }
    }
}

impl Co2Settings {
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.solver.validate();
        if !(self.rate > 0.0) {
            v.push(format!("co2.rate must be positive, got {}", self.rate));
        }
        if !(self.duration >= 0.0) {
            v.push(format!("co2.duration must be non-negative, got {}", self.duration));
        }
        if let Some(n) = self.normalize_by {
            if !(n > 0.0) {
                v.push(format!("co2.normalize_by must be positive, got {n}"));
            }
        }
        v
    }
}

/// One leakage sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakSample {
    pub time: f64,
    /// Normalized upward CO₂ flux through the leak plane.
    pub flux: f64,
    /// Time integral of `flux` so far, s.
    pub cumulative: f64,
    /// CO₂ volume in place, m³.
    pub in_place: f64,
}

pub trait Co2Sink {
    fn snapshot_interval(&self) -> Option<f64> {
        None
    }
    fn snapshot(&mut self, _time: f64, _state: &TwoPhaseState) -> Result<()> {
        Ok(())
    }
}

pub struct NullCo2Sink;

impl Co2Sink for NullCo2Sink {}

#[derive(Clone, Debug)]
pub struct Co2Report {
    pub series: Vec<LeakSample>,
    pub final_state: TwoPhaseState,
    pub injected: f64,
    pub in_place: f64,
    pub produced: f64,
    pub steps: usize,
    pub failed_steps: usize,
    pub wall_time: f64,
}

impl Co2Report {
    pub fn volume_imbalance(&self) -> f64 {
        self.in_place + self.produced - self.injected
    }

    pub fn relative_volume_error(&self) -> f64 {
        if self.injected == 0.0 {
            self.volume_imbalance().abs()
        } else {
            self.volume_imbalance().abs() / self.injected
        }
    }

    pub fn peak_flux(&self) -> f64 {
        self.series.iter().map(|s| s.flux).fold(0.0, f64::max)
    }

    pub fn cumulative_flux(&self) -> f64 {
        self.series.last().map_or(0.0, |s| s.cumulative)
    }
}

/// Injects CO₂ for `settings.duration` from the well cells and samples the
/// normalized leakage flux after every accepted step.
pub fn simulate_co2(
    problem: &Co2Problem,
    settings: &Co2Settings,
    sink: &mut dyn Co2Sink,
) -> Result<Co2Report> {
    let started = Instant::now();
    let errors = settings.validate();
    if !errors.is_empty() {
        return Err(MicpError::Validation(errors));
    }
    let norm = settings.normalize_by.unwrap_or(settings.rate);
    let mut state = TwoPhaseState::initial(problem.grid, problem.params);
    let mut report = Co2Report {
        series: Vec::new(),
        final_state: state.clone(),
        injected: 0.0,
        in_place: 0.0,
        produced: 0.0,
        steps: 0,
        failed_steps: 0,
        wall_time: 0.0,
    };
    if settings.duration == 0.0 {
        return Ok(report);
    }
    let faces = problem.leak_plane_faces(settings.plane_z)?;
    let interval = sink.snapshot_interval().filter(|d| *d > 0.0);
    let mut next_snapshot = 0.0;
    if interval.is_some() {
        sink.snapshot(0.0, &state)?;
        next_snapshot = interval.unwrap_or(0.0);
    }
    let s = &settings.solver;
    let (mut t, mut dt) = (0.0, s.dt_init);
    let mut cumulative = 0.0;
    let end = settings.duration;
    while t < end {
        let remaining = end - t;
        let mut dt_try = dt.min(s.dt_max);
        if dt_try >= remaining {
            dt_try = remaining;
        } else if dt_try > 0.75 * remaining {
            dt_try = 0.5 * remaining;
        }
        match problem.solve_step(&state, dt_try, settings.rate, s) {
            Ok((next, iterations)) => {
                next.check()?;
                report.injected += settings.rate * dt_try;
                report.produced += problem.co2_outflow(&next) * dt_try;
                let flux = problem.plane_flux(&next, &faces) / norm;
                // Backward Euler: the end-of-step flux holds over the step.
                cumulative += flux * dt_try;
                t = if dt_try == remaining { end } else { t + dt_try };
                state = next;
                report.steps += 1;
                report.series.push(LeakSample {
                    time: t,
                    flux,
                    cumulative,
                    in_place: problem.co2_in_place(&state),
                });
                if let Some(d) = interval {
                    if t >= next_snapshot * (1.0 - 1e-12) || t == end {
                        sink.snapshot(t, &state)?;
                        while next_snapshot <= t * (1.0 + 1e-12) {
                            next_snapshot += d;
                        }
                    }
                }
                dt = if iterations <= s.grow_below {
                    (dt_try * s.dt_grow).min(s.dt_max)
                } else {
                    dt_try
                };
            }
            Err(e) if e.is_retryable() => {
                report.failed_steps += 1;
                dt = dt_try * s.dt_cut;
                if dt < s.dt_min {
                    return Err(MicpError::TimestepTooSmall {
                        time: t,
                        dt,
                        dt_min: s.dt_min,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    report.in_place = problem.co2_in_place(&state);
    report.final_state = state;
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec, Layout, LeakSpec, ReservoirSpec};
    use crate::kinetics::RockLaw;

    fn row_grid(n: usize, gravity: [f64; 3]) -> Grid {
        let mut spec = DomainSpec::uniform([n, 1, 1], [1.0; 3]);
        spec.gravity = gravity;
        let leak = LeakSpec {
            anchor_x: 0.5,
            a: 1.0,
            w: 1.0,
            y_center: 0.5,
            theta: 90.0,
            g_l: 0.0,
            g_u: 0.0,
            l: 0.0,
            k_l: 1e-14,
        };
        let res = ReservoirSpec {
            layout: Layout {
                h_lower: 1.0,
                h: 0.0,
                h_upper: 0.0,
                well_x: 0.5,
                well_y: 0.5,
                p_bdry: 1e7,
            },
            rock: RockLaw::default(),
        };
        build_domain(&spec, &leak, &res).unwrap()
    }

    #[test]
    fn no_injection_leaves_state_unchanged() {
        let grid = row_grid(5, [0.0, 0.0, -9.81]);
        let params = TwoPhaseParams::default();
        let p = Co2Problem::new(&grid, &params, RockFields::initial(&grid), Execution::Sequential)
            .unwrap();
        let s0 = TwoPhaseState::initial(&grid, &params);
        let (s1, _) = p.solve_step(&s0, 3600.0, 0.0, &SolverSettings::default()).unwrap();
        for (a, b) in s0.cells.iter().zip(&s1.cells) {
            assert!((a[0] - b[0]).abs() < 1e-6 && a[1] == b[1]);
        }
    }

    #[test]
    fn front_position_matches_injected_volume() {
        let n = 200;
        let grid = row_grid(n, [0.0; 3]);
        let params = TwoPhaseParams {
            mu_co2: 2.54e-4,
            ..TwoPhaseParams::default()
        };
        let p = Co2Problem::new(&grid, &params, RockFields::initial(&grid), Execution::Sequential)
            .unwrap();
        let rate = 1e-6;
        let settings = Co2Settings {
            rate,
            duration: 30.0 * 86400.0,
            plane_z: 0.5,
            normalize_by: None,
            solver: SolverSettings {
                dt_max: 6.0 * 3600.0,
                ..SolverSettings::default()
            },
        };
        let mut state = TwoPhaseState::initial(&grid, &params);
        let mut t = 0.0;
        let dt = 3600.0;
        while t < settings.duration {
            state = p.solve_step(&state, dt, rate, &settings.solver).unwrap().0;
            t += dt;
        }
        // Equal viscosities and linear relative permeability give a linear
        // flux function, so the s = 1/2 level travels with the volumetric
        // front V / (phi A).
        let expected = rate * t / 0.15;
        let s = state.saturation();
        let k = s.iter().position(|&v| v < 0.5).unwrap();
        let front = (k - 1) as f64 + 0.5 + (s[k - 1] - 0.5) / (s[k - 1] - s[k]);
        assert!((front - expected).abs() / expected < 0.05, "{front} vs {expected}");
        assert!((p.co2_in_place(&state) - rate * t).abs() / (rate * t) < 1e-6);
    }
}
