//! Residual and Jacobian assembly for the coupled MICP system.
//!
//! Unknowns per cell: `[p, c_m, c_o, c_u, phi_b, phi_c]`. Rows per cell:
//! water volume balance, three solute mass balances, two immobile mass
//! balances. Face fluxes use TPFA with the current (implicit) permeability
//! and first-order upwinding of the solutes.

use crate::ad::{Dual, Real};
use crate::exec::{self, Execution};
use crate::grid::{transmissibility_t, Grid};
use crate::kinetics::{permeability_t, rates_t, KineticParams, RockLaw};

use super::{MicpState, NV};

pub(crate) const NF: usize = 4;

/// Pressure scale of the placeholder water row in isolated cells, Pa.
pub(crate) const P_SCALE: f64 = 1e5;

/// Flux kernel output: `[F_w, F_w c_m, F_w c_o, F_w c_u]` with derivatives
/// against both cells' unknowns.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FaceFlux {
    pub val: [f64; NF],
    pub da: [[f64; NV]; NF],
    pub db: [[f64; NV]; NF],
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoundaryFlux {
    pub val: [f64; NF],
    pub d: [[f64; NV]; NF],
}

/// Everything the kernels need that stays fixed over one time step.
pub(crate) struct StepContext<'a> {
    pub grid: &'a Grid,
    pub params: &'a KineticParams,
    pub rocks: &'a [RockLaw],
    pub old: &'a MicpState,
    pub dt: f64,
    /// Injection rate assigned to each cell, m³/s.
    pub q: &'a [f64],
    pub c_inj: [f64; 3],
    pub conc_scale: [f64; 3],
    pub exec: Execution,
}

#[inline]
fn potential<T: Real>(p: T, rho: f64, gpot: f64) -> T {
    p + rho * gpot
}

fn face_kernel<T: Real>(
    ctx: &StepContext,
    f: usize,
    xa: [T; NV],
    xb: [T; NV],
) -> [T; NF] {
    let face = &ctx.grid.faces[f];
    let (a, b) = face.cells;
    let (ra, rb) = (&ctx.rocks[a], &ctx.rocks[b]);
    let ka = permeability_t(ra, -xa[4] - xa[5] + ra.phi_0);
    let kb = permeability_t(rb, -xb[4] - xb[5] + rb.phi_0);
    let trans = transmissibility_t(face.area, face.half, ka, kb);
    let rho = ctx.params.rho_w;
    let ga = ctx.grid.gravity_potential(&ctx.grid.cells[a].center);
    let gb = ctx.grid.gravity_potential(&ctx.grid.cells[b].center);
    let dphi = potential(xa[0], rho, ga) - potential(xb[0], rho, gb);
    let flux = trans * dphi / ctx.params.mu_w;
    let up = if flux.value() >= 0.0 { &xa } else { &xb };
    [flux, flux * up[1], flux * up[2], flux * up[3]]
}

fn boundary_kernel<T: Real>(ctx: &StepContext, bf: usize, x: [T; NV]) -> [T; NF] {
    let face = &ctx.grid.boundary_faces[bf];
    let cell = face.cell;
    let rock = &ctx.rocks[cell];
    let k = permeability_t(rock, -x[4] - x[5] + rock.phi_0);
    let trans = k * (face.area / face.half);
    let rho = ctx.params.rho_w;
    let g = ctx.grid.gravity_potential(&ctx.grid.cells[cell].center);
    // The hydrostatic boundary profile has potential p_bdry everywhere.
    let dphi = potential(x[0], rho, g) - ctx.grid.p_bdry;
    let flux = trans * dphi / ctx.params.mu_w;
    if flux.value() >= 0.0 {
        [flux, flux * x[1], flux * x[2], flux * x[3]]
    } else {
        [flux, T::cst(0.0), T::cst(0.0), T::cst(0.0)]
    }
}

/// Accumulation, well and reaction terms of one cell.
fn cell_kernel<T: Real>(ctx: &StepContext, i: usize, x: [T; NV], shear: f64) -> [T; NV] {
    let cell = &ctx.grid.cells[i];
    let rock = &ctx.rocks[i];
    let old = &ctx.old.cells[i];
    let v_dt = cell.volume / ctx.dt;
    let phi_old = rock.phi_0 - old[4] - old[5];
    let phi = -x[4] - x[5] + rock.phi_0;
    let q = ctx.q[i];

    let water = if ctx.grid.is_isolated(i) {
        (x[0] - old[0]) * (v_dt * rock.phi_0 / P_SCALE)
    } else {
        (phi - phi_old) * v_dt - q
    };
    let r = rates_t([x[1], x[2], x[3], x[4], x[5]], ctx.params, rock, shear);
    let mut out = [water; NV];
    for s in 0..3 {
        out[1 + s] = (x[1 + s] * phi - old[1 + s] * phi_old) * v_dt
            - q * ctx.c_inj[s]
            - r[s] * cell.volume;
    }
    out[4] = (x[4] - old[4]) * (v_dt * ctx.params.rho_b) - r[3] * cell.volume;
    out[5] = (x[5] - old[5]) * (v_dt * ctx.params.rho_c) - r[4] * cell.volume;
    out
}

/// Row scales turning each residual into a dimensionless pore-volume
/// fraction (water, immobile) or fraction of the reference concentration.
pub(crate) fn row_scales(ctx: &StepContext, i: usize) -> [f64; NV] {
    let cell = &ctx.grid.cells[i];
    let base = ctx.dt / (cell.volume * ctx.rocks[i].phi_0);
    [
        base,
        base / ctx.conc_scale[0],
        base / ctx.conc_scale[1],
        base / ctx.conc_scale[2],
        base / ctx.params.rho_b,
        base / ctx.params.rho_c,
    ]
}

fn seed<const N: usize>(x: &[f64; NV], offset: usize) -> [Dual<N>; NV] {
    std::array::from_fn(|k| Dual::var(x[k], offset + k))
}

pub(crate) fn face_fluxes(ctx: &StepContext, x: &MicpState) -> Vec<FaceFlux> {
    exec::map_indexed(ctx.exec, ctx.grid.faces.len(), |f| {
        let (a, b) = ctx.grid.faces[f].cells;
        let out = face_kernel::<Dual<12>>(ctx, f, seed(&x.cells[a], 0), seed(&x.cells[b], NV));
        let mut flux = FaceFlux {
            val: [0.0; NF],
            da: [[0.0; NV]; NF],
            db: [[0.0; NV]; NF],
        };
        for e in 0..NF {
            flux.val[e] = out[e].re;
            flux.da[e].copy_from_slice(&out[e].eps[..NV]);
            flux.db[e].copy_from_slice(&out[e].eps[NV..]);
        }
        flux
    })
}

pub(crate) fn boundary_fluxes(ctx: &StepContext, x: &MicpState) -> Vec<BoundaryFlux> {
    exec::map_indexed(ctx.exec, ctx.grid.boundary_faces.len(), |bf| {
        let c = ctx.grid.boundary_faces[bf].cell;
        let out = boundary_kernel::<Dual<NV>>(ctx, bf, seed(&x.cells[c], 0));
        BoundaryFlux {
            val: out.map(|d| d.re),
            d: out.map(|d| d.eps),
        }
    })
}

/// Plain-valued face fluxes `[F_w, F_w c_m, F_w c_o, F_w c_u]`.
pub(crate) fn face_flux_values(ctx: &StepContext, x: &MicpState) -> Vec<[f64; NF]> {
    exec::map_indexed(ctx.exec, ctx.grid.faces.len(), |f| {
        let (a, b) = ctx.grid.faces[f].cells;
        face_kernel::<f64>(ctx, f, x.cells[a], x.cells[b])
    })
}

pub(crate) fn boundary_flux_values(ctx: &StepContext, x: &MicpState) -> Vec<[f64; NF]> {
    exec::map_indexed(ctx.exec, ctx.grid.boundary_faces.len(), |bf| {
        let c = ctx.grid.boundary_faces[bf].cell;
        boundary_kernel::<f64>(ctx, bf, x.cells[c])
    })
}

/// ‖∇p_w − ρ_w g‖ per cell from the cell-averaged Darcy velocity,
/// `‖v‖ μ_w / K`.
pub(crate) fn shear_from_fluxes(
    grid: &Grid,
    rocks: &[RockLaw],
    params: &KineticParams,
    x: &MicpState,
    faces: &[[f64; NF]],
    boundary: &[[f64; NF]],
    exec: Execution,
) -> Vec<f64> {
    exec::map_indexed(exec, grid.n_active(), |i| {
        let cell = &grid.cells[i];
        // Sum of the two oriented face fluxes per axis.
        let mut along = [0.0; 3];
        for &(f, sign) in &grid.cell_faces[i] {
            let _ = sign;
            along[grid.faces[f].axis] += faces[f][0];
        }
        for &bf in &grid.cell_boundaries[i] {
            let face = &grid.boundary_faces[bf];
            along[face.axis] += face.sign * boundary[bf][0];
        }
        let mut v2 = 0.0;
        for axis in 0..3 {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = cell.size[u] * cell.size[w];
            let v = along[axis] / (2.0 * area);
            v2 += v * v;
        }
        let rock = &rocks[i];
        let k = permeability_t(rock, rock.phi_0 - x.cells[i][4] - x.cells[i][5]);
        v2.sqrt() * params.mu_w / k
    })
}

pub(crate) fn shear_field(ctx: &StepContext, x: &MicpState) -> Vec<f64> {
    let faces = face_flux_values(ctx, x);
    let boundary = boundary_flux_values(ctx, x);
    shear_from_fluxes(ctx.grid, ctx.rocks, ctx.params, x, &faces, &boundary, ctx.exec)
}

/// Unscaled residual, 6 entries per cell.
pub(crate) fn residual(ctx: &StepContext, x: &MicpState, shear: &[f64]) -> Vec<[f64; NV]> {
    let faces = face_flux_values(ctx, x);
    let boundary = boundary_flux_values(ctx, x);
    exec::map_indexed(ctx.exec, ctx.grid.n_active(), |i| {
        let mut r = cell_kernel::<f64>(ctx, i, x.cells[i], shear[i]);
        for &(f, sign) in &ctx.grid.cell_faces[i] {
            for e in 0..NF {
                r[e] += sign * faces[f][e];
            }
        }
        for &bf in &ctx.grid.cell_boundaries[i] {
            for e in 0..NF {
                r[e] += boundary[bf][e];
            }
        }
        r
    })
}

/// Jacobian in block form: a dense 6x6 diagonal block per cell and, per
/// face, the 4x6 flux rows of each cell against the other cell's unknowns.
pub(crate) struct Linearization {
    pub residual: Vec<[f64; NV]>,
    pub diag: Vec<[[f64; NV]; NV]>,
    /// Per face: (row a against b, row b against a).
    pub off: Vec<([[f64; NV]; NF], [[f64; NV]; NF])>,
}

pub(crate) fn linearize(ctx: &StepContext, x: &MicpState, shear: &[f64]) -> Linearization {
    let faces = face_fluxes(ctx, x);
    let boundary = boundary_fluxes(ctx, x);
    let cells: Vec<([f64; NV], [[f64; NV]; NV])> =
        exec::map_indexed(ctx.exec, ctx.grid.n_active(), |i| {
            let out = cell_kernel::<Dual<NV>>(ctx, i, seed(&x.cells[i], 0), shear[i]);
            let mut r = out.map(|d| d.re);
            let mut j = out.map(|d| d.eps);
            for &(f, sign) in &ctx.grid.cell_faces[i] {
                let ff = &faces[f];
                let self_d = if sign > 0.0 { &ff.da } else { &ff.db };
                for e in 0..NF {
                    r[e] += sign * ff.val[e];
                    for k in 0..NV {
                        j[e][k] += sign * self_d[e][k];
                    }
                }
            }
            for &bf in &ctx.grid.cell_boundaries[i] {
                let b = &boundary[bf];
                for e in 0..NF {
                    r[e] += b.val[e];
                    for k in 0..NV {
                        j[e][k] += b.d[e][k];
                    }
                }
            }
            (r, j)
        });
    let off = faces
        .iter()
        .map(|ff| {
            let neg = ff.da.map(|row| row.map(|v| -v));
            (ff.db, neg)
        })
        .collect();
    let (residual, diag) = cells.into_iter().unzip();
    Linearization {
        residual,
        diag,
        off,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micp_solver::tests::{column_grid, ctx_fixture};

    /// The analytic (dual-number) Jacobian matches central differences of
    /// the plain residual.
    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = column_grid(4);
        let params = KineticParams::default();
        let rock = RockLaw::default();
        let rocks: Vec<RockLaw> = grid.cells.iter().map(|c| rock.with_k0(c.perm0)).collect();
        let mut old = MicpState::initial(&grid, &params);
        for (i, c) in old.cells.iter_mut().enumerate() {
            c[1] = 0.004 + 0.001 * i as f64;
            c[2] = 0.02 / (1.0 + i as f64);
            c[3] = 100.0 + 10.0 * i as f64;
            c[4] = 0.003 + 0.001 * i as f64;
            c[5] = 0.01 + 0.002 * i as f64;
        }
        let mut x = old.clone();
        for (i, c) in x.cells.iter_mut().enumerate() {
            c[0] += 2e4 * (4 - i) as f64;
            c[1] *= 1.1;
            c[3] *= 0.9;
            c[4] += 1e-4;
            c[5] += 2e-4;
        }
        let q = vec![1e-5, 0.0, 0.0, 0.0];
        let ctx = ctx_fixture(&grid, &params, &rocks, &old, 3600.0, &q);
        let shear = vec![1e4; grid.n_active()];
        let lin = linearize(&ctx, &x, &shear);
        let steps = [50.0, 1e-7, 1e-7, 1e-4, 1e-8, 1e-8];
        for cell in 0..grid.n_active() {
            for k in 0..NV {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.cells[cell][k] += steps[k];
                xm.cells[cell][k] -= steps[k];
                let rp = residual(&ctx, &xp, &shear);
                let rm = residual(&ctx, &xm, &shear);
                for row in 0..grid.n_active() {
                    for e in 0..NV {
                        let fd = (rp[row][e] - rm[row][e]) / (2.0 * steps[k]);
                        let an = if row == cell {
                            lin.diag[row][e][k]
                        } else {
                            let f = grid.faces.iter().position(|f| {
                                f.cells == (row, cell) || f.cells == (cell, row)
                            });
                            match f {
                                Some(f) if e < NF => {
                                    let (ab, ba) = &lin.off[f];
                                    if grid.faces[f].cells.0 == row {
                                        ab[e][k]
                                    } else {
                                        ba[e][k]
                                    }
                                }
                                _ => 0.0,
                            }
                        };
                        let scale = fd.abs().max(an.abs()).max(1e-14);
                        assert!(
                            (fd - an).abs() / scale < 1e-4,
                            "row {row} eq {e} col {cell}/{k}: fd {fd:e} vs {an:e}"
                        );
                    }
                }
            }
        }
    }
}
