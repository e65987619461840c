//! Fully implicit MICP transport-reaction solver.
//!
//! Each time step solves the coupled water, solute and immobile balances
//! with Newton's method. The two immobile unknowns of every cell enter only
//! their own cell's equations, so they are eliminated block by block before
//! the sparse solve and recovered afterwards.

mod assembly;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{MicpError, Result};
use crate::exec::{self, Execution};
use crate::grid::Grid;
use crate::kinetics::{permeability_t, rates_t, CellChemState, KineticParams, RockLaw};
use crate::linsolve::BlockSystem;
use crate::schedule::{Schedule, WellControl};

use assembly::{StepContext, NF};

/// Unknowns per cell.
pub const NV: usize = 6;
pub const P: usize = 0;
pub const C_M: usize = 1;
pub const C_O: usize = 2;
pub const C_U: usize = 3;
pub const PHI_B: usize = 4;
pub const PHI_C: usize = 5;

/// Names of the five transported or reacting species, in unknown order.
pub const SPECIES: [&str; 5] = ["microbes", "oxygen", "urea", "biofilm", "calcite"];

/// Primary unknowns `[p, c_m, c_o, c_u, phi_b, phi_c]` of every active cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MicpState {
    pub cells: Vec<[f64; NV]>,
}

impl MicpState {
    /// Hydrostatic pressure, no solutes, clean rock.
    pub fn initial(grid: &Grid, params: &KineticParams) -> Self {
        let cells = grid
            .cells
            .iter()
            .map(|c| {
                let mut x = [0.0; NV];
                x[P] = grid.hydrostatic(params.rho_w, &c.center);
                x
            })
            .collect();
        Self { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn chem(&self, i: usize) -> CellChemState {
        let x = &self.cells[i];
        CellChemState {
            c_m: x[C_M],
            c_o: x[C_O],
            c_u: x[C_U],
            phi_b: x[PHI_B],
            phi_c: x[PHI_C],
        }
    }

    pub fn porosity(&self, rocks: &[RockLaw]) -> Vec<f64> {
        self.cells
            .iter()
            .zip(rocks)
            .map(|(x, r)| r.phi_0 - x[PHI_B] - x[PHI_C])
            .collect()
    }

    pub fn permeability(&self, rocks: &[RockLaw]) -> Vec<f64> {
        self.porosity(rocks)
            .into_iter()
            .zip(rocks)
            .map(|(phi, r)| permeability_t(r, phi))
            .collect()
    }

    /// Checks non-negativity and the porosity bounds of every cell.
    pub fn check(&self, rocks: &[RockLaw]) -> Result<()> {
        for (i, rock) in rocks.iter().enumerate() {
            if !self.cells[i][P].is_finite() {
                return Err(MicpError::InvariantViolation(format!(
                    "cell {i}: non-finite pressure"
                )));
            }
            self.chem(i)
                .check(rock)
                .map_err(|e| MicpError::InvariantViolation(format!("cell {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Per-cell rock law with the cell's own `K_0` and `phi_0`.
pub fn cell_rocks(grid: &Grid, rock: &RockLaw) -> Vec<RockLaw> {
    grid.cells
        .iter()
        .map(|c| RockLaw {
            phi_0: c.poro0,
            ..rock.with_k0(c.perm0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Convergence threshold on the max scaled residual.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_grow: f64,
    pub dt_cut: f64,
    /// Grow the step only after converging in at most this many iterations.
    pub grow_below: usize,
    pub execution: Execution,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tol: 1e-8,
            max_newton: 15,
            dt_init: 60.0,
            dt_min: 1e-2,
            dt_max: 3600.0,
            dt_grow: 2.0,
            dt_cut: 0.5,
            grow_below: 5,
            execution: Execution::default(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.newton_tol > 0.0) {
            out.push(format!("solver.newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.max_newton == 0 {
            out.push("solver.max_newton must be at least 1".into());
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            out.push(format!(
                "solver time steps must satisfy 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.dt_grow >= 1.0) {
            out.push(format!("solver.dt_grow must be >= 1, got {}", self.dt_grow));
        }
        if !(self.dt_cut > 0.0 && self.dt_cut < 1.0) {
            out.push(format!("solver.dt_cut must lie in (0, 1), got {}", self.dt_cut));
        }
        out
    }
}

/// Cumulative balance of one conserved quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpeciesLedger {
    pub initial: f64,
    pub current: f64,
    pub injected: f64,
    /// Net outflow across the open boundary.
    pub produced: f64,
    /// Net reaction source.
    pub reacted: f64,
}

impl SpeciesLedger {
    pub fn imbalance(&self) -> f64 {
        (self.current - self.initial) - (self.injected - self.produced + self.reacted)
    }

    /// Imbalance relative to the largest term of the balance.
    pub fn relative_error(&self) -> f64 {
        let scale = [
            self.initial,
            self.current,
            self.injected,
            self.produced.abs(),
            self.reacted.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if scale == 0.0 {
            0.0
        } else {
            self.imbalance().abs() / scale
        }
    }
}

/// Water volume (m³) and species masses (kg).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MassLedger {
    pub water: SpeciesLedger,
    pub species: [SpeciesLedger; 5],
}

impl MassLedger {
    pub fn max_relative_error(&self) -> f64 {
        self.species
            .iter()
            .map(SpeciesLedger::relative_error)
            .fold(self.water.relative_error(), f64::max)
    }
}

/// Result of one converged time step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: MicpState,
    pub iterations: usize,
    pub residual: f64,
    /// Mass removed by projecting negative iterates back to zero in the
    /// final Newton update, per species, kg.
    pub clamped: [f64; 5],
}

/// Scalar diagnostics emitted after every accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub dt: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Highest pressure among the well cells, Pa.
    pub well_pressure: f64,
    /// Smallest `K / K_0` over the grid.
    pub min_perm_ratio: f64,
    pub calcite_mass: f64,
    pub biofilm_mass: f64,
}

/// Receives records while a simulation runs.
pub trait MicpSink {
    /// Simulated seconds between state snapshots; `None` disables them.
    fn snapshot_interval(&self) -> Option<f64> {
        None
    }
    fn snapshot(&mut self, _time: f64, _state: &MicpState) -> Result<()> {
        Ok(())
    }
    fn record(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl MicpSink for NullSink {}

/// Collects step records in memory.
#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<(f64, MicpState)>,
    pub interval: Option<f64>,
}

impl MicpSink for MemorySink {
    fn snapshot_interval(&self) -> Option<f64> {
        self.interval
    }
    fn snapshot(&mut self, time: f64, state: &MicpState) -> Result<()> {
        self.snapshots.push((time, state.clone()));
        Ok(())
    }
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub final_state: MicpState,
    pub final_time: f64,
    pub ledger: MassLedger,
    pub clamped: [f64; 5],
    pub steps: usize,
    pub failed_steps: usize,
    pub newton_iterations: usize,
    pub wall_time: f64,
}

/// A run that stopped on a hard solver failure, with the last accepted state.
#[derive(Debug, Error)]
#[error("simulation stopped at t = {time:.6e} s: {source}")]
pub struct RunFailure {
    pub source: MicpError,
    pub time: f64,
    pub last_good: Box<MicpState>,
}

/// Fixed data for simulating on one grid.
pub struct MicpProblem<'a> {
    pub grid: &'a Grid,
    pub params: &'a KineticParams,
    pub rocks: Vec<RockLaw>,
    /// Reference concentrations used to scale the solute equations.
    pub conc_scale: [f64; 3],
    pub execution: Execution,
    system: BlockSystem,
    well_weights: Vec<f64>,
}

const CONC_SCALE_FLOOR: f64 = 1e-6;

impl<'a> MicpProblem<'a> {
    pub fn new(
        grid: &'a Grid,
        params: &'a KineticParams,
        rock: &RockLaw,
        conc_scale: [f64; 3],
        execution: Execution,
    ) -> Result<Self> {
        let mut errors = params.validate();
        errors.extend(rock.validate());
        if !errors.is_empty() {
            return Err(MicpError::Validation(errors));
        }
        if grid.n_active() == 0 {
            return Err(MicpError::EmptyDomain);
        }
        let rocks = cell_rocks(grid, rock);
        let well_volume: f64 = grid.well_cells.iter().map(|&c| grid.cells[c].volume).sum();
        let mut well_weights = vec![0.0; grid.n_active()];
        for &c in &grid.well_cells {
            well_weights[c] = grid.cells[c].volume / well_volume;
        }
        Ok(Self {
            grid,
            params,
            rocks,
            conc_scale: conc_scale.map(|c| c.max(CONC_SCALE_FLOOR)),
            execution,
            system: BlockSystem::new(grid, NV - 2, &[1.0, 0.0, 0.0, 0.0])?,
            well_weights,
        })
    }

    /// Scales from the largest concentrations of a schedule and a state.
    pub fn scales_for(schedule: &Schedule, state: &MicpState) -> [f64; 3] {
        let mut s = schedule.max_injected();
        for x in &state.cells {
            for k in 0..3 {
                s[k] = s[k].max(x[1 + k]);
            }
        }
        s
    }

    fn context<'s>(
        &'s self,
        old: &'s MicpState,
        dt: f64,
        q: &'s [f64],
        control: &WellControl,
    ) -> StepContext<'s> {
        StepContext {
            grid: self.grid,
            params: self.params,
            rocks: &self.rocks,
            old,
            dt,
            q,
            c_inj: control.c_inj,
            conc_scale: self.conc_scale,
            exec: self.execution,
        }
    }

    fn well_rates(&self, control: &WellControl) -> Vec<f64> {
        self.well_weights.iter().map(|w| w * control.rate).collect()
    }

    /// Shear-stress proxy ‖∇p_w − ρ_w g‖ per cell for a given state, Pa/m.
    pub fn shear_norm_field(&self, state: &MicpState) -> Vec<f64> {
        let q = vec![0.0; self.grid.n_active()];
        let ctx = self.context(state, 1.0, &q, &WellControl::shut_in());
        assembly::shear_field(&ctx, state)
    }

    /// Unscaled residual of the step `old -> new` over `dt`, six entries per
    /// cell: water volume rate, solute and immobile mass rates.
    pub fn residual(
        &self,
        old: &MicpState,
        new: &MicpState,
        dt: f64,
        control: &WellControl,
    ) -> Vec<[f64; NV]> {
        let q = self.well_rates(control);
        let ctx = self.context(old, dt, &q, control);
        let shear = assembly::shear_field(&ctx, old);
        assembly::residual(&ctx, new, &shear)
    }

    /// Advances `old` by `dt` under `control`.
    pub fn solve_timestep(
        &self,
        old: &MicpState,
        dt: f64,
        control: &WellControl,
        settings: &SolverSettings,
    ) -> Result<StepOutcome> {
        let q = self.well_rates(control);
        let ctx = self.context(old, dt, &q, control);
        let scales: Vec<[f64; NV]> = exec::map_indexed(self.execution, self.grid.n_active(), |i| {
            assembly::row_scales(&ctx, i)
        });
        // Detachment sees the shear of the start of the step: the power law
        // has unbounded slope at zero shear, which stalls Newton near no-flow.
        let shear = assembly::shear_field(&ctx, old);
        let mut x = old.clone();
        let mut clamped = [0.0; 5];
        let mut norm = f64::INFINITY;
        for it in 0..=settings.max_newton {
            let lin = assembly::linearize(&ctx, &x, &shear);
            norm = scaled_norm(&lin.residual, &scales);
            if !norm.is_finite() {
                break;
            }
            // At least one update, so slow kinetics still advance.
            if it > 0 && norm < settings.newton_tol {
                return Ok(StepOutcome {
                    state: x,
                    iterations: it,
                    residual: norm,
                    clamped,
                });
            }
            if it == settings.max_newton {
                break;
            }
            let delta = self.newton_direction(&lin, &scales)?;
            clamped = self.apply_update(&mut x, &delta);
        }
        Err(MicpError::NonConvergence {
            iterations: settings.max_newton,
            residual: norm,
        })
    }

    /// Solves `J δ = -r` with the immobile unknowns eliminated per cell.
    fn newton_direction(
        &self,
        lin: &assembly::Linearization,
        scales: &[[f64; NV]],
    ) -> Result<Vec<[f64; NV]>> {
        const B: usize = NV - 2;
        let grid = self.grid;
        let n = grid.n_active();

        // Per cell: scaled rows, then M = J22^-1 J21 and m = J22^-1 r2.
        struct Local {
            diag: [[f64; NV]; NV],
            r: [f64; NV],
            m_mat: [[f64; B]; 2],
            m_vec: [f64; 2],
        }
        let locals: Vec<Result<Local>> = exec::map_indexed(self.execution, n, |i| {
            let s = &scales[i];
            let mut diag = lin.diag[i];
            let mut r = lin.residual[i];
            for e in 0..NV {
                r[e] *= s[e];
                for v in diag[e].iter_mut() {
                    *v *= s[e];
                }
            }
            let (a, b, c, d) = (diag[4][4], diag[4][5], diag[5][4], diag[5][5]);
            let det = a * d - b * c;
            if !(det.abs() > 1e-300) || !det.is_finite() {
                return Err(MicpError::LinearSolve(format!(
                    "singular immobile block in cell {i}"
                )));
            }
            let inv = [[d / det, -b / det], [-c / det, a / det]];
            let mut m_mat = [[0.0; B]; 2];
            let mut m_vec = [0.0; 2];
            for row in 0..2 {
                for k in 0..B {
                    m_mat[row][k] = inv[row][0] * diag[4][k] + inv[row][1] * diag[5][k];
                }
                m_vec[row] = inv[row][0] * r[4] + inv[row][1] * r[5];
            }
            Ok(Local {
                diag,
                r,
                m_mat,
                m_vec,
            })
        });
        let locals: Vec<Local> = locals.into_iter().collect::<Result<_>>()?;

        // S = J11 - J12 M for a 4x6 row block against a neighbour.
        let reduce = |rows: &[[f64; NV]; NF], scale: &[f64; NV], nb: &Local| {
            let mut out = [0.0; B * B];
            for e in 0..B {
                for k in 0..B {
                    out[e * B + k] = scale[e]
                        * (rows[e][k] - rows[e][4] * nb.m_mat[0][k] - rows[e][5] * nb.m_mat[1][k]);
                }
            }
            out
        };
        let face_blocks: Vec<([f64; B * B], [f64; B * B])> =
            exec::map_indexed(self.execution, grid.faces.len(), |f| {
                let (a, b) = grid.faces[f].cells;
                let (ab, ba) = &lin.off[f];
                (
                    reduce(ab, &scales[a], &locals[b]),
                    reduce(ba, &scales[b], &locals[a]),
                )
            });
        let rhs_cells: Vec<([f64; B * B], [f64; B])> = exec::map_indexed(self.execution, n, |i| {
            let loc = &locals[i];
            let mut block = [0.0; B * B];
            let mut rhs = [0.0; B];
            for e in 0..B {
                for k in 0..B {
                    block[e * B + k] = loc.diag[e][k]
                        - loc.diag[e][4] * loc.m_mat[0][k]
                        - loc.diag[e][5] * loc.m_mat[1][k];
                }
                rhs[e] = -loc.r[e] + loc.diag[e][4] * loc.m_vec[0] + loc.diag[e][5] * loc.m_vec[1];
            }
            for &(f, sign) in &grid.cell_faces[i] {
                let face = &grid.faces[f];
                let (rows, nb) = if sign > 0.0 {
                    (&lin.off[f].0, face.cells.1)
                } else {
                    (&lin.off[f].1, face.cells.0)
                };
                let m = &locals[nb].m_vec;
                for e in 0..B {
                    rhs[e] += scales[i][e] * (rows[e][4] * m[0] + rows[e][5] * m[1]);
                }
            }
            (block, rhs)
        });

        let mut jac = self.system.zeros();
        let mut rhs = vec![0.0; n * B];
        for (i, (block, r)) in rhs_cells.iter().enumerate() {
            let d = self.system.diag(i);
            jac.values[d..d + B * B].copy_from_slice(block);
            rhs[i * B..(i + 1) * B].copy_from_slice(r);
        }
        for (f, (ab, ba)) in face_blocks.iter().enumerate() {
            let (a, b) = grid.faces[f].cells;
            let (oab, oba) = self.system.off_diag(f, a, b);
            jac.values[oab..oab + B * B].copy_from_slice(ab);
            jac.values[oba..oba + B * B].copy_from_slice(ba);
        }
        let d1 = self.system.solve(&jac, &rhs)?;

        Ok(exec::map_indexed(self.execution, n, |i| {
            let loc = &locals[i];
            let mut out = [0.0; NV];
            out[..B].copy_from_slice(&d1[i * B..(i + 1) * B]);
            for row in 0..2 {
                let mut v = -loc.m_vec[row];
                for k in 0..B {
                    v -= loc.m_mat[row][k] * out[k];
                }
                out[B + row] = v;
            }
            out
        }))
    }

    /// Adds the Newton update and projects onto the admissible set. Returns
    /// the mass removed by the projection per species.
    fn apply_update(&self, x: &mut MicpState, delta: &[[f64; NV]]) -> [f64; 5] {
        let grid = self.grid;
        let rho = [self.params.rho_b, self.params.rho_c];
        let clamps: Vec<[f64; 5]> = {
            let rocks = &self.rocks;
            let cells = &mut x.cells;
            let mut removed = vec![[0.0; 5]; cells.len()];
            let mut pairs: Vec<(&mut [f64; NV], &mut [f64; 5])> =
                cells.iter_mut().zip(removed.iter_mut()).collect();
            exec::for_each_mut(self.execution, &mut pairs, |i, (cell, gone)| {
                let volume = grid.cells[i].volume;
                let phi0 = rocks[i].phi_0;
                for k in 0..NV {
                    cell[k] += delta[i][k];
                }
                let phi = phi0 - cell[PHI_B].max(0.0) - cell[PHI_C].max(0.0);
                for s in 0..3 {
                    if cell[1 + s] < 0.0 {
                        gone[s] = -cell[1 + s] * phi.max(0.0) * volume;
                        cell[1 + s] = 0.0;
                    }
                }
                for s in 0..2 {
                    let k = PHI_B + s;
                    if cell[k] < 0.0 {
                        gone[3 + s] = -cell[k] * rho[s] * volume;
                        cell[k] = 0.0;
                    }
                }
                let cap = phi0 * (1.0 - PORE_MARGIN);
                let excess = cell[PHI_B] + cell[PHI_C] - cap;
                if excess > 0.0 {
                    let cut_c = excess.min(cell[PHI_C]);
                    cell[PHI_C] -= cut_c;
                    cell[PHI_B] -= excess - cut_c;
                    gone[4] += cut_c * rho[1] * volume;
                    gone[3] += (excess - cut_c) * rho[0] * volume;
                }
            });
            removed
        };
        let mut total = [0.0; 5];
        for c in clamps {
            for s in 0..5 {
                total[s] += c[s];
            }
        }
        total
    }

    /// Amounts in place: water volume and species masses.
    pub fn in_place(&self, state: &MicpState) -> (f64, [f64; 5]) {
        let mut water = 0.0;
        let mut mass = [0.0; 5];
        for (i, x) in state.cells.iter().enumerate() {
            let v = self.grid.cells[i].volume;
            let phi = self.rocks[i].phi_0 - x[PHI_B] - x[PHI_C];
            water += phi * v;
            for s in 0..3 {
                mass[s] += x[1 + s] * phi * v;
            }
            mass[3] += x[PHI_B] * self.params.rho_b * v;
            mass[4] += x[PHI_C] * self.params.rho_c * v;
        }
        (water, mass)
    }

    /// Boundary outflow and reaction totals over one accepted step.
    fn step_exchange(
        &self,
        old: &MicpState,
        new: &MicpState,
        dt: f64,
        control: &WellControl,
    ) -> ([f64; NF], [f64; 5]) {
        let q = self.well_rates(control);
        let ctx = self.context(old, dt, &q, control);
        let boundary = assembly::boundary_flux_values(&ctx, new);
        let shear = assembly::shear_field(&ctx, old);
        let mut out = [0.0; NF];
        for b in &boundary {
            for e in 0..NF {
                out[e] += b[e] * dt;
            }
        }
        let mut reacted = [0.0; 5];
        for (i, x) in new.cells.iter().enumerate() {
            let r = rates_t([x[1], x[2], x[3], x[4], x[5]], self.params, &self.rocks[i], shear[i]);
            let v = self.grid.cells[i].volume;
            for s in 0..5 {
                reacted[s] += r[s] * v * dt;
            }
        }
        (out, reacted)
    }

    fn record(&self, time: f64, dt: f64, step: &StepOutcome) -> StepRecord {
        let state = &step.state;
        let well_pressure = self
            .grid
            .well_cells
            .iter()
            .map(|&c| state.cells[c][P])
            .fold(f64::NEG_INFINITY, f64::max);
        let min_perm_ratio = state
            .permeability(&self.rocks)
            .iter()
            .zip(&self.rocks)
            .map(|(k, r)| k / r.k_0)
            .fold(f64::INFINITY, f64::min);
        let (_, mass) = self.in_place(state);
        StepRecord {
            time,
            dt,
            iterations: step.iterations,
            residual: step.residual,
            well_pressure,
            min_perm_ratio,
            calcite_mass: mass[4],
            biofilm_mass: mass[3],
        }
    }
}

/// Fraction of the initial pore space always kept open.
const PORE_MARGIN: f64 = 1e-6;

fn scaled_norm(r: &[[f64; NV]], scales: &[[f64; NV]]) -> f64 {
    let mut norm: f64 = 0.0;
    for (ri, si) in r.iter().zip(scales) {
        for e in 0..NV {
            let v = (ri[e] * si[e]).abs();
            if v.is_nan() {
                return f64::NAN;
            }
            norm = norm.max(v);
        }
    }
    norm
}

/// Decides when the sink receives state snapshots.
struct SnapshotClock {
    interval: Option<f64>,
    next: f64,
    last: Option<f64>,
}

impl SnapshotClock {
    fn new(interval: Option<f64>) -> Self {
        Self {
            interval: interval.filter(|d| *d > 0.0),
            next: 0.0,
            last: None,
        }
    }

    /// Emits at every crossing of the cadence, and at `t` when `close` is
    /// set and `t` was not just written.
    fn tick(&mut self, sink: &mut dyn MicpSink, t: f64, state: &MicpState, close: bool) -> Result<()> {
        let Some(d) = self.interval else {
            return Ok(());
        };
        let due = t >= self.next * (1.0 - 1e-12);
        if due || (close && self.last != Some(t)) {
            sink.snapshot(t, state)?;
            self.last = Some(t);
            while self.next <= t * (1.0 + 1e-12) {
                self.next += d;
            }
        }
        Ok(())
    }
}

/// Runs `schedule` from `initial`, landing exactly on every period end.
pub fn simulate_micp(
    problem: &MicpProblem,
    schedule: &Schedule,
    initial: MicpState,
    settings: &SolverSettings,
    sink: &mut dyn MicpSink,
) -> std::result::Result<RunReport, RunFailure> {
    let started = Instant::now();
    let fail = |source: MicpError, time: f64, state: &MicpState| RunFailure {
        source,
        time,
        last_good: Box::new(state.clone()),
    };
    let errors = settings.validate();
    if !errors.is_empty() {
        return Err(fail(MicpError::Validation(errors), 0.0, &initial));
    }
    if let Err(e) = initial.check(&problem.rocks) {
        return Err(fail(e, 0.0, &initial));
    }

    let (water0, mass0) = problem.in_place(&initial);
    let mut ledger = MassLedger::default();
    ledger.water.initial = water0;
    ledger.water.current = water0;
    for s in 0..5 {
        ledger.species[s].initial = mass0[s];
        ledger.species[s].current = mass0[s];
    }

    let mut clock = SnapshotClock::new(sink.snapshot_interval());

    let mut state = initial;
    let mut t = 0.0;
    let mut report = RunReport {
        final_state: state.clone(),
        final_time: 0.0,
        ledger,
        clamped: [0.0; 5],
        steps: 0,
        failed_steps: 0,
        newton_iterations: 0,
        wall_time: 0.0,
    };
    clock.tick(sink, t, &state, false).map_err(|e| fail(e, t, &state))?;

    for period in schedule.periods() {
        let control = period.control();
        let end = period.end_time;
        let mut dt = settings.dt_init;
        while t < end {
            let remaining = end - t;
            let mut dt_try = dt.min(settings.dt_max);
            if dt_try >= remaining {
                dt_try = remaining;
            } else if dt_try > 0.75 * remaining {
                dt_try = 0.5 * remaining;
            }
            match problem.solve_timestep(&state, dt_try, &control, settings) {
                Ok(step) => {
                    let (out, reacted) = problem.step_exchange(&state, &step.state, dt_try, &control);
                    let led = &mut report.ledger;
                    led.water.injected += control.rate * dt_try;
                    led.water.produced += out[0];
                    for s in 0..3 {
                        led.species[s].injected += control.rate * control.c_inj[s] * dt_try;
                        led.species[s].produced += out[1 + s];
                    }
                    for s in 0..5 {
                        led.species[s].reacted += reacted[s];
                        report.clamped[s] += step.clamped[s];
                    }
                    let (water, mass) = problem.in_place(&step.state);
                    led.water.current = water;
                    for s in 0..5 {
                        led.species[s].current = mass[s];
                    }
                    t = if dt_try == remaining { end } else { t + dt_try };
                    report.steps += 1;
                    report.newton_iterations += step.iterations;
                    let rec = problem.record(t, dt_try, &step);
                    state = step.state;
                    sink.record(&rec).map_err(|e| fail(e, t, &state))?;
                    clock.tick(sink, t, &state, false).map_err(|e| fail(e, t, &state))?;
                    if step.iterations <= settings.grow_below {
                        dt = (dt_try * settings.dt_grow).min(settings.dt_max);
                    } else {
                        dt = dt_try;
                    }
                }
                Err(e) if e.is_retryable() => {
                    report.failed_steps += 1;
                    dt = dt_try * settings.dt_cut;
                    if dt < settings.dt_min {
                        let err = MicpError::TimestepTooSmall {
                            time: t,
                            dt,
                            dt_min: settings.dt_min,
                        };
                        return Err(fail(err, t, &state));
                    }
                }
                Err(e) => return Err(fail(e, t, &state)),
            }
        }
    }
    clock.tick(sink, t, &state, true).map_err(|e| fail(e, t, &state))?;
    report.final_state = state;
    report.final_time = t;
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec, Layout, LeakSpec, ReservoirSpec};
    use crate::kinetics::batch_oracle;

    /// A row of `n` unit cells along x, open at the far end.
    pub(crate) fn column_grid(n: usize) -> Grid {
        let spec = DomainSpec::uniform([n, 1, 1], [1.0; 3]);
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

    pub(crate) fn ctx_fixture<'a>(
        grid: &'a Grid,
        params: &'a KineticParams,
        rocks: &'a [RockLaw],
        old: &'a MicpState,
        dt: f64,
        q: &'a [f64],
    ) -> StepContext<'a> {
        StepContext {
            grid,
            params,
            rocks,
            old,
            dt,
            q,
            c_inj: [0.01, 0.04, 0.0],
            conc_scale: [0.01, 0.04, 300.0],
            exec: Execution::Sequential,
        }
    }

    #[test]
    fn hydrostatic_state_has_zero_shear() {
        let grid = column_grid(5);
        let params = KineticParams::default();
        let p = MicpProblem::new(&grid, &params, &RockLaw::default(), [1.0; 3], Execution::Sequential)
            .unwrap();
        let s = MicpState::initial(&grid, &params);
        assert!(p.shear_norm_field(&s).iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn steady_injection_gives_linear_pressure_and_uniform_shear() {
        let n = 10;
        let grid = column_grid(n);
        let params = KineticParams::default();
        let p = MicpProblem::new(&grid, &params, &RockLaw::default(), [1.0; 3], Execution::Sequential)
            .unwrap();
        let rate = 1e-5; // v = 1e-5 m/s through a 1 m² section
        let control = WellControl {
            rate,
            c_inj: [0.0; 3],
        };
        let old = MicpState::initial(&grid, &params);
        let step = p
            .solve_timestep(&old, 60.0, &control, &SolverSettings::default())
            .unwrap();
        let dp_dx = rate * params.mu_w / 1e-14;
        for i in 1..n {
            let drop = step.state.cells[i - 1][P] - step.state.cells[i][P];
            assert!((drop - dp_dx).abs() / dp_dx < 1e-8, "cell {i}: {drop}");
        }
        let shear = p.shear_norm_field(&step.state);
        for (i, s) in shear.iter().enumerate().skip(1) {
            assert!((s - 2.54e5).abs() / 2.54e5 < 1e-3, "cell {i}: {s}");
        }
    }

    #[test]
    fn single_closed_cell_tracks_batch_oracle() {
        let grid = Grid::closed_cell(1.0, 1e-14, 0.15);
        let params = KineticParams::default();
        let rock = RockLaw::default();
        let problem = MicpProblem::new(&grid, &params, &rock, [0.01, 0.04, 300.0], Execution::Sequential)
            .unwrap();
        let mut init = MicpState::initial(&grid, &params);
        init.cells[0][C_M] = 0.01;
        init.cells[0][C_O] = 0.04;
        init.cells[0][C_U] = 300.0;
        init.cells[0][PHI_B] = 0.01;
        let t_end = 10.0 * 3600.0;
        let dt = 60.0;
        let mut state = init.clone();
        for _ in 0..(t_end / dt) as usize {
            state = problem
                .solve_timestep(&state, dt, &WellControl::shut_in(), &SolverSettings::default())
                .unwrap()
                .state;
        }
        let oracle = batch_oracle(&init.chem(0), &params, &rock, t_end, 0.01).unwrap();
        let got = state.chem(0);
        let pairs = [
            (got.c_m, oracle.c_m, init.cells[0][C_M]),
            (got.c_o, oracle.c_o, init.cells[0][C_O]),
            (got.c_u, oracle.c_u, init.cells[0][C_U]),
            (got.phi_b, oracle.phi_b, init.cells[0][PHI_B]),
            (got.phi_c, oracle.phi_c, 0.01),
        ];
        for (k, (a, b, s)) in pairs.iter().enumerate() {
            assert!((a - b).abs() / b.abs().max(*s) < 1e-2, "species {k}: {a} vs {b}");
        }
    }
}
