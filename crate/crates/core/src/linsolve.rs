//! Block-sparse Jacobians on the active-cell graph.
//!
//! The sparsity pattern (dense `b x b` blocks for every cell and each of its
//! face neighbours) is fixed per grid. Small systems go straight to sparse LU
//! with a cached symbolic factorization; large ones are solved by GMRES with
//! a block ILU(0) preconditioner, falling back to LU if that stalls.

use std::sync::OnceLock;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Col;

use crate::error::{MicpError, Result};
use crate::grid::Grid;

pub struct BlockSystem {
    pub block: usize,
    n_cells: usize,
    /// Per row cell: offset of its first block in the value array (in blocks).
    row_start: Vec<usize>,
    /// Per row cell: slot of the diagonal block.
    diag_slot: Vec<usize>,
    /// Column cell of every slot, sorted within each row.
    cols: Vec<usize>,
    /// Per face: (slot of cell b in row a, slot of cell a in row b).
    face_slots: Vec<(usize, usize)>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic_lu: OnceLock<std::result::Result<SymbolicLu<usize>, String>>,
    iterative: bool,
    /// Row weights that combine a block row into the pressure equation.
    pressure_weights: Vec<f64>,
    pressure_symbolic: SymbolicSparseColMat<usize>,
    pressure_argsort: Argsort<usize>,
    pressure_lu: OnceLock<std::result::Result<SymbolicLu<usize>, String>>,
}

/// Systems with at least this many cells use the preconditioned Krylov path.
pub const ITERATIVE_MIN_CELLS: usize = 2000;
const GMRES_RESTART: usize = 50;
const GMRES_MAX_ITERS: usize = 500;
const GMRES_RTOL: f64 = 1e-10;

/// Block values laid out row cell by row cell, each block row-major.
pub struct BlockMatrix {
    pub block: usize,
    pub values: Vec<f64>,
}

impl BlockSystem {
    /// `pressure_weights` combine the equations of a cell into one whose
    /// accumulation term does not depend on the non-pressure unknowns; the
    /// first unknown of each block must be pressure.
    pub fn new(grid: &Grid, block: usize, pressure_weights: &[f64]) -> Result<Self> {
        assert_eq!(pressure_weights.len(), block);
        faer::set_global_parallelism(faer::Par::Seq);
        let n_cells = grid.n_active();
        let mut neighbours: Vec<Vec<usize>> = (0..n_cells).map(|i| vec![i]).collect();
        for f in &grid.faces {
            neighbours[f.cells.0].push(f.cells.1);
            neighbours[f.cells.1].push(f.cells.0);
        }
        for list in neighbours.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let mut row_start = Vec::with_capacity(n_cells + 1);
        let mut acc = 0;
        for list in &neighbours {
            row_start.push(acc);
            acc += list.len();
        }
        row_start.push(acc);
        let slot = |row: usize, col: usize| {
            neighbours[row]
                .binary_search(&col)
                .expect("face neighbour present in pattern")
        };
        let diag_slot = (0..n_cells).map(|i| slot(i, i)).collect();
        let face_slots = grid
            .faces
            .iter()
            .map(|f| (slot(f.cells.0, f.cells.1), slot(f.cells.1, f.cells.0)))
            .collect();

        let bb = block * block;
        let mut pairs = Vec::with_capacity(acc * bb);
        for (row, list) in neighbours.iter().enumerate() {
            for &col in list {
                for r in 0..block {
                    for c in 0..block {
                        pairs.push(Pair {
                            row: row * block + r,
                            col: col * block + c,
                        });
                    }
                }
            }
        }
        let n = n_cells * block;
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| MicpError::LinearSolve(format!("pattern: {e:?}")))?;
        let scalar: Vec<Pair<usize, usize>> = neighbours
            .iter()
            .enumerate()
            .flat_map(|(row, list)| list.iter().map(move |&col| Pair { row, col }))
            .collect();
        let (pressure_symbolic, pressure_argsort) =
            SymbolicSparseColMat::try_new_from_indices(n_cells, n_cells, &scalar)
                .map_err(|e| MicpError::LinearSolve(format!("pattern: {e:?}")))?;
        Ok(Self {
            block,
            n_cells,
            row_start,
            diag_slot,
            cols: neighbours.into_iter().flatten().collect(),
            face_slots,
            symbolic,
            argsort,
            symbolic_lu: OnceLock::new(),
            iterative: n_cells >= ITERATIVE_MIN_CELLS,
            pressure_weights: pressure_weights.to_vec(),
            pressure_symbolic,
            pressure_argsort,
            pressure_lu: OnceLock::new(),
        })
    }

    /// Forces the direct (`false`) or iterative (`true`) path.
    pub fn with_iterative(mut self, iterative: bool) -> Self {
        self.iterative = iterative;
        self
    }

    pub fn zeros(&self) -> BlockMatrix {
        BlockMatrix {
            block: self.block,
            values: vec![0.0; self.row_start[self.n_cells] * self.block * self.block],
        }
    }

    /// Value offset of the diagonal block of `cell`.
    pub fn diag(&self, cell: usize) -> usize {
        (self.row_start[cell] + self.diag_slot[cell]) * self.block * self.block
    }

    /// Value offsets of the (a, b) and (b, a) blocks of face `f`.
    pub fn off_diag(&self, face: usize, a: usize, b: usize) -> (usize, usize) {
        let (sab, sba) = self.face_slots[face];
        let bb = self.block * self.block;
        ((self.row_start[a] + sab) * bb, (self.row_start[b] + sba) * bb)
    }

    /// Range of block offsets belonging to row `cell`.
    pub fn row_range(&self, cell: usize) -> std::ops::Range<usize> {
        let bb = self.block * self.block;
        self.row_start[cell] * bb..self.row_start[cell + 1] * bb
    }

    /// Solves `J x = rhs`.
    pub fn solve(&self, jac: &BlockMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.iterative {
            if let Some(x) = self.solve_iterative(jac, rhs) {
                return Ok(x);
            }
        }
        self.solve_direct(jac, rhs)
    }

    pub fn solve_direct(&self, jac: &BlockMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        let symbolic_lu = self
            .symbolic_lu
            .get_or_init(|| {
                SymbolicLu::try_new(self.symbolic.as_ref()).map_err(|e| format!("symbolic LU: {e:?}"))
            })
            .as_ref()
            .map_err(|e| MicpError::LinearSolve(e.clone()))?;
        let mat = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &jac.values)
            .map_err(|e| MicpError::LinearSolve(format!("assembly: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic_lu.clone(), mat.as_ref())
            .map_err(|e| MicpError::LinearSolve(format!("factorization: {e:?}")))?;
        let b = Col::from_fn(rhs.len(), |i| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(MicpError::LinearSolve("non-finite solution".into()));
        }
        Ok(out)
    }

    /// `y = J x`.
    fn mul(&self, jac: &BlockMatrix, x: &[f64], y: &mut [f64]) {
        let b = self.block;
        let bb = b * b;
        for row in 0..self.n_cells {
            let out = &mut y[row * b..(row + 1) * b];
            out.fill(0.0);
            for slot in self.row_start[row]..self.row_start[row + 1] {
                let m = &jac.values[slot * bb..(slot + 1) * bb];
                let xc = &x[self.cols[slot] * b..(self.cols[slot] + 1) * b];
                for r in 0..b {
                    out[r] += (0..b).map(|c| m[r * b + c] * xc[c]).sum::<f64>();
                }
            }
        }
    }

    /// Block ILU(0) in place on a copy of the values. Diagonal slots hold the
    /// inverted pivot blocks afterwards. `None` if a pivot block is singular.
    fn ilu0(&self, jac: &BlockMatrix) -> Option<Vec<f64>> {
        let b = self.block;
        let bb = b * b;
        let mut v = jac.values.clone();
        let mut tmp = vec![0.0; bb];
        for row in 0..self.n_cells {
            let range = self.row_start[row]..self.row_start[row + 1];
            let diag = self.row_start[row] + self.diag_slot[row];
            for slot in range.start..diag {
                let k = self.cols[slot];
                let kd = self.row_start[k] + self.diag_slot[k];
                // L_ik = A_ik D_k^-1
                mat_mul(&v[slot * bb..(slot + 1) * bb], &v[kd * bb..(kd + 1) * bb], &mut tmp, b);
                v[slot * bb..(slot + 1) * bb].copy_from_slice(&tmp);
                for ks in kd + 1..self.row_start[k + 1] {
                    let j = self.cols[ks];
                    let Ok(pos) = self.cols[range.clone()].binary_search(&j) else {
                        continue;
                    };
                    let js = range.start + pos;
                    for r in 0..b {
                        for c in 0..b {
                            let mut acc = 0.0;
                            for m in 0..b {
                                acc += v[slot * bb + r * b + m] * v[ks * bb + m * b + c];
                            }
                            v[js * bb + r * b + c] -= acc;
                        }
                    }
                }
            }
            invert(&mut v[diag * bb..(diag + 1) * bb], b)?;
        }
        Some(v)
    }

    /// LU factors of the pressure system: the weighted sum of each block row,
    /// restricted to the pressure column.
    fn pressure_factor(&self, jac: &BlockMatrix) -> Option<Lu<usize, f64>> {
        let b = self.block;
        let bb = b * b;
        let symbolic = self
            .pressure_lu
            .get_or_init(|| {
                SymbolicLu::try_new(self.pressure_symbolic.as_ref())
                    .map_err(|e| format!("symbolic LU: {e:?}"))
            })
            .as_ref()
            .ok()?;
        let values: Vec<f64> = (0..self.cols.len())
            .map(|slot| {
                (0..b)
                    .map(|e| self.pressure_weights[e] * jac.values[slot * bb + e * b])
                    .sum()
            })
            .collect();
        let mat = SparseColMat::new_from_argsort(
            self.pressure_symbolic.clone(),
            &self.pressure_argsort,
            &values,
        )
        .ok()?;
        Lu::try_new_with_symbolic(symbolic.clone(), mat.as_ref()).ok()
    }

    /// Two-stage preconditioner: a pressure correction from the pressure
    /// system, then ILU(0) on what is left.
    fn precondition(&self, pre: &Preconditioner, r: &[f64], x: &mut [f64], work: &mut [f64]) {
        let b = self.block;
        let rp = Col::from_fn(self.n_cells, |i| {
            (0..b).map(|e| self.pressure_weights[e] * r[i * b + e]).sum::<f64>()
        });
        let dp = pre.pressure.solve(&rp);
        x.fill(0.0);
        for i in 0..self.n_cells {
            x[i * b] = dp[i];
        }
        self.mul(pre.jac, x, work);
        for (w, ri) in work.iter_mut().zip(r) {
            *w = ri - *w;
        }
        let mut y = vec![0.0; x.len()];
        self.ilu_apply(&pre.ilu, work, &mut y);
        x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
    }

    /// Applies the ILU(0) factors: `x = (LU)^-1 r`.
    fn ilu_apply(&self, f: &[f64], r: &[f64], x: &mut [f64]) {
        let b = self.block;
        let bb = b * b;
        let mut acc = vec![0.0; b];
        for row in 0..self.n_cells {
            let diag = self.row_start[row] + self.diag_slot[row];
            acc.copy_from_slice(&r[row * b..(row + 1) * b]);
            for slot in self.row_start[row]..diag {
                let c = self.cols[slot];
                for i in 0..b {
                    acc[i] -= (0..b).map(|m| f[slot * bb + i * b + m] * x[c * b + m]).sum::<f64>();
                }
            }
            x[row * b..(row + 1) * b].copy_from_slice(&acc);
        }
        for row in (0..self.n_cells).rev() {
            let diag = self.row_start[row] + self.diag_slot[row];
            acc.copy_from_slice(&x[row * b..(row + 1) * b]);
            for slot in diag + 1..self.row_start[row + 1] {
                let c = self.cols[slot];
                for i in 0..b {
                    acc[i] -= (0..b).map(|m| f[slot * bb + i * b + m] * x[c * b + m]).sum::<f64>();
                }
            }
            for i in 0..b {
                x[row * b + i] = (0..b).map(|m| f[diag * bb + i * b + m] * acc[m]).sum();
            }
        }
    }

    /// Right-preconditioned restarted GMRES. `None` if it does not reach the
    /// tolerance.
    pub fn solve_iterative(&self, jac: &BlockMatrix, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = rhs.len();
        let pre = Preconditioner {
            jac,
            ilu: self.ilu0(jac)?,
            pressure: self.pressure_factor(jac)?,
        };
        let mut work = vec![0.0; n];
        let b_norm = norm(rhs);
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Some(x);
        }
        let target = GMRES_RTOL * b_norm;
        let m = GMRES_RESTART;
        let mut basis: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn, mut g) = (vec![0.0; m], vec![0.0; m], vec![0.0; m + 1]);
        let mut iters = 0;
        while iters < GMRES_MAX_ITERS {
            self.mul(jac, &x, &mut w);
            for (wi, bi) in w.iter_mut().zip(rhs) {
                *wi = bi - *wi;
            }
            let beta = norm(&w);
            if beta <= target {
                return Some(x);
            }
            basis[0].iter_mut().zip(&w).for_each(|(v, wi)| *v = wi / beta);
            g.fill(0.0);
            g[0] = beta;
            let mut k = 0;
            while k < m && iters < GMRES_MAX_ITERS {
                iters += 1;
                self.precondition(&pre, &basis[k], &mut z, &mut work);
                self.mul(jac, &z, &mut w);
                for i in 0..=k {
                    let hik: f64 = w.iter().zip(&basis[i]).map(|(a, b)| a * b).sum();
                    h[i][k] = hik;
                    w.iter_mut().zip(&basis[i]).for_each(|(a, b)| *a -= hik * b);
                }
                let hk = norm(&w);
                h[k + 1][k] = hk;
                if hk > 0.0 {
                    basis[k + 1].iter_mut().zip(&w).for_each(|(v, wi)| *v = wi / hk);
                }
                for i in 0..k {
                    let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = t;
                }
                let r = h[k][k].hypot(h[k + 1][k]);
                if r == 0.0 {
                    return None;
                }
                cs[k] = h[k][k] / r;
                sn[k] = h[k + 1][k] / r;
                h[k][k] = r;
                h[k + 1][k] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] *= cs[k];
                k += 1;
                if g[k].abs() <= target || hk == 0.0 {
                    break;
                }
            }
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
                y[i] = (g[i] - s) / h[i][i];
            }
            w.fill(0.0);
            for (yi, v) in y.iter().zip(&basis) {
                w.iter_mut().zip(v).for_each(|(a, b)| *a += yi * b);
            }
            self.precondition(&pre, &w, &mut z, &mut work);
            x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        }
        self.mul(jac, &x, &mut w);
        let res: f64 = w.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        (res <= target && x.iter().all(|v| v.is_finite())).then_some(x)
    }
}

struct Preconditioner<'a> {
    jac: &'a BlockMatrix,
    ilu: Vec<f64>,
    pressure: Lu<usize, f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `out = a * b` for row-major `n x n` blocks.
fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = (0..n).map(|m| a[r * n + m] * b[m * n + c]).sum();
        }
    }
}

/// Inverts a row-major `n x n` block in place by Gauss-Jordan with partial
/// pivoting.
fn invert(a: &mut [f64], n: usize) -> Option<()> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        // Columns carry different units, so only an exact zero counts.
        if a[piv * n + col] == 0.0 || !a[piv * n + col].is_finite() {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
                inv.swap(piv * n + c, col * n + c);
            }
        }
        let d = a[col * n + col];
        for c in 0..n {
            a[col * n + c] /= d;
            inv[col * n + c] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                if f != 0.0 {
                    for c in 0..n {
                        a[r * n + c] -= f * a[col * n + c];
                        inv[r * n + c] -= f * inv[col * n + c];
                    }
                }
            }
        }
    }
    if !inv.iter().all(|v| v.is_finite()) {
        return None;
    }
    a.copy_from_slice(&inv);
    Some(())
}
