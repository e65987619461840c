//! Structured Cartesian grids with aquifer/caprock/leak tagging and TPFA
//! transmissibilities.
//!
//! Axes are tensor-product: each axis is a list of `(count, size)` segments,
//! which lets a single grid resolve a thin tilted leak while keeping the
//! far field coarse. `z` points up; the lower aquifer sits at the bottom.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{MicpError, Result};
use crate::kinetics::RockLaw;

/// Geometric tolerance for point-in-slab and layer tests, m.
const GEOM_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Axis(pub Vec<(usize, f64)>);

impl Axis {
    pub fn uniform(n: usize, size: f64) -> Self {
        Axis(vec![(n, size)])
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|s| s.0).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.0
            .iter()
            .flat_map(|&(n, d)| std::iter::repeat(d).take(n))
            .collect()
    }

    /// Node coordinates, `len() + 1` values starting at zero.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut x = 0.0;
        out.push(x);
        for d in self.sizes() {
            x += d;
            out.push(x);
        }
        out
    }

    pub fn extent(&self) -> f64 {
        self.0.iter().map(|&(n, d)| n as f64 * d).sum()
    }

    /// Index of the cell containing coordinate `x` (clamped to the axis).
    pub fn locate(&self, x: f64) -> usize {
        let nodes = self.nodes();
        let n = self.len();
        (0..n).find(|&i| x < nodes[i + 1]).unwrap_or(n - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
    /// Gravity vector, m/s².
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

impl DomainSpec {
    pub fn uniform(n: [usize; 3], d: [f64; 3]) -> Self {
        Self {
            x: Axis::uniform(n[0], d[0]),
            y: Axis::uniform(n[1], d[1]),
            z: Axis::uniform(n[2], d[2]),
            gravity: default_gravity(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.x.extent(), self.y.extent(), self.z.extent()]
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, axis) in [("x", &self.x), ("y", &self.y), ("z", &self.z)] {
            if axis.is_empty() {
                v.push(format!("domain.{name} has no cells"));
            }
            for &(n, d) in &axis.0 {
                if n == 0 || !(d > 0.0 && d.is_finite()) {
                    v.push(format!(
                        "domain.{name} segment ({n}, {d}) needs a positive count and size"
                    ));
                }
            }
        }
        v
    }
}

/// A planar leak through the caprock, extruded along `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakSpec {
    /// Horizontal offset of the leak's lower end from the injection well, m.
    pub anchor_x: f64,
    /// Aperture (slab thickness normal to the centerline), m.
    pub a: f64,
    /// Extent along y, m.
    pub w: f64,
    /// y coordinate of the leak's mid-width, m.
    pub y_center: f64,
    /// Tilt from horizontal, degrees.
    pub theta: f64,
    /// Lower-aquifer gap, m.
    pub g_l: f64,
    /// Upper-aquifer gap, m.
    pub g_u: f64,
    /// Potential-leakage gap, m.
    pub l: f64,
    /// Leak permeability, m².
    #[serde(rename = "K_L")]
    pub k_l: f64,
}

impl LeakSpec {
    pub fn validate(&self, domain_width: f64) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.a > 0.0) {
            v.push(format!("leak.a must be > 0 (got {})", self.a));
        }
        if !(self.w > 0.0 && self.w <= domain_width + GEOM_EPS) {
            v.push(format!(
                "leak.w must lie in (0, {domain_width}] (got {})",
                self.w
            ));
        }
        if !((self.theta > 90.0 && self.theta < 180.0) || self.theta == 90.0) {
            v.push(format!(
                "leak.theta must be 90 or lie in (90, 180) degrees (got {})",
                self.theta
            ));
        }
        if !(self.k_l > 0.0) {
            v.push(format!("leak.K_L must be > 0 (got {})", self.k_l));
        }
        v
    }

    fn unit_direction(&self) -> (f64, f64) {
        if self.theta == 90.0 {
            return (0.0, 1.0);
        }
        let t = self.theta.to_radians();
        (t.cos(), t.sin())
    }

    /// Point-in-slab predicate in the x–z plane plus the y-extent test.
    pub fn contains(&self, base: (f64, f64), p: [f64; 3]) -> bool {
        let (cx, cz) = self.unit_direction();
        let dist = ((p[0] - base.0) * cz - (p[2] - base.1) * cx).abs();
        dist <= 0.5 * self.a + GEOM_EPS && (p[1] - self.y_center).abs() <= 0.5 * self.w + GEOM_EPS
    }
}

/// Vertical layering and well placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    /// Lower aquifer thickness, m.
    #[serde(rename = "H_lower")]
    pub h_lower: f64,
    /// Caprock thickness, m. Zero gives a single aquifer.
    pub h: f64,
    /// Upper aquifer thickness, m.
    #[serde(rename = "H_upper")]
    pub h_upper: f64,
    /// Injection well position, m.
    pub well_x: f64,
    pub well_y: f64,
    /// Boundary pressure at z = 0, Pa (hydrostatic above).
    pub p_bdry: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirSpec {
    pub layout: Layout,
    /// Aquifer rock; `rock.k_0` is the aquifer permeability.
    pub rock: RockLaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    LowerAquifer,
    Caprock,
    UpperAquifer,
    Leak,
}

impl Region {
    pub fn code(self) -> u8 {
        match self {
            Region::LowerAquifer => 0,
            Region::Caprock => 1,
            Region::UpperAquifer => 2,
            Region::Leak => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub ijk: [usize; 3],
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub volume: f64,
    pub region: Region,
    pub perm0: f64,
    pub poro0: f64,
}

/// Interior face between active cells `cells.0` (minus side) and `cells.1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub cells: (usize, usize),
    pub axis: usize,
    pub area: f64,
    /// Center-to-face distances on each side, m.
    pub half: (f64, f64),
    pub center: [f64; 3],
}

impl Face {
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = 1.0;
        n
    }
}

/// Constant-pressure boundary face of a single active cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub axis: usize,
    /// +1 if the outward normal points along +axis.
    pub sign: f64,
    pub area: f64,
    pub half: f64,
    pub center: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub dims: [usize; 3],
    pub nodes: [Vec<f64>; 3],
    pub gravity: [f64; 3],
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub well_cells: Vec<usize>,
    /// Structured index → active cell index.
    pub active: Vec<Option<usize>>,
    /// Per active cell: `(face index, +1 if the cell is the minus side)`.
    pub cell_faces: Vec<Vec<(usize, f64)>>,
    /// Per active cell: indices into `boundary_faces`.
    pub cell_boundaries: Vec<Vec<usize>>,
    /// Boundary pressure at z = 0 and water density used for the
    /// hydrostatic boundary profile.
    pub p_bdry: f64,
}

impl Grid {
    pub fn n_active(&self) -> usize {
        self.cells.len()
    }

    pub fn linear_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn perm0(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.perm0).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn leak_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.region == Region::Leak)
            .map(|(i, _)| i)
    }

    /// Gravity potential per unit density at a point, `-g · x`.
    pub fn gravity_potential(&self, x: &[f64; 3]) -> f64 {
        -(self.gravity[0] * x[0] + self.gravity[1] * x[1] + self.gravity[2] * x[2])
    }

    /// Hydrostatic water pressure at a point.
    pub fn hydrostatic(&self, rho_w: f64, x: &[f64; 3]) -> f64 {
        self.p_bdry - rho_w * self.gravity_potential(x)
    }

    /// A single isolated cell with no faces, boundaries or wells.
    pub fn closed_cell(volume: f64, perm0: f64, poro0: f64) -> Self {
        let side = volume.cbrt();
        Grid {
            dims: [1, 1, 1],
            nodes: [vec![0.0, side], vec![0.0, side], vec![0.0, side]],
            gravity: default_gravity(),
            cells: vec![Cell {
                ijk: [0, 0, 0],
                center: [0.5 * side; 3],
                size: [side; 3],
                volume,
                region: Region::LowerAquifer,
                perm0,
                poro0,
            }],
            faces: Vec::new(),
            boundary_faces: Vec::new(),
            well_cells: Vec::new(),
            active: vec![Some(0)],
            cell_faces: vec![Vec::new()],
            cell_boundaries: vec![Vec::new()],
            p_bdry: 1e7,
        }
    }

    /// True if the cell has no flow connections at all.
    pub fn is_isolated(&self, cell: usize) -> bool {
        self.cell_faces[cell].is_empty()
            && self.cell_boundaries[cell].is_empty()
            && !self.well_cells.contains(&cell)
    }
}

/// TPFA transmissibility `A / (d1/K1 + d2/K2)` of an interior face, m³.
pub fn face_transmissibility(grid: &Grid, perm: &[f64], face: &Face) -> Result<f64> {
    let (a, b) = face.cells;
    if a >= grid.n_active() || b >= grid.n_active() || perm.len() != grid.n_active() {
        return Err(MicpError::Domain(
            "face refers to cells outside the permeability field".into(),
        ));
    }
    let (k1, k2) = (perm[a], perm[b]);
    if !(k1 > 0.0 && k2 > 0.0) {
        return Err(MicpError::Domain(format!(
            "non-positive permeability at face ({k1}, {k2})"
        )));
    }
    Ok(transmissibility_t(face.area, face.half, k1, k2))
}

#[inline]
pub(crate) fn transmissibility_t<T: Real>(area: f64, half: (f64, f64), k1: T, k2: T) -> T {
    (k1.recip() * half.0 + k2.recip() * half.1).recip() * area
}

/// Builds the active grid.
///
/// Cells are tagged by layer from their center height; caprock cells whose
/// center lies inside the leak slab become `Leak`, the remaining caprock is
/// inactive. Active pockets with no path to a constant-pressure boundary are
/// deactivated as well.
pub fn build_domain(spec: &DomainSpec, leak: &LeakSpec, reservoir: &ReservoirSpec) -> Result<Grid> {
    let mut problems = spec.validate();
    let [lx, ly, lz] = spec.extents();
    problems.extend(leak.validate(ly));
    problems.extend(reservoir.rock.validate());
    let lay = &reservoir.layout;
    let stack = lay.h_lower + lay.h + lay.h_upper;
    if (stack - lz).abs() > 1e-9 * lz.max(1.0) {
        problems.push(format!(
            "layer thicknesses sum to {stack} m but the z axis spans {lz} m"
        ));
    }
    if !problems.is_empty() {
        return Err(MicpError::Validation(problems));
    }

    let base = (lay.well_x + leak.anchor_x, lay.h_lower);
    let has_caprock = lay.h > 0.0;
    if has_caprock {
        let (cx, cz) = leak.unit_direction();
        let top_x = base.0 + lay.h * cx / cz;
        let inside = |x: f64| (-GEOM_EPS..=lx + GEOM_EPS).contains(&x);
        if !inside(base.0) || !inside(top_x) {
            return Err(MicpError::Geometry(format!(
                "leak runs from x = {:.3} to x = {:.3}, outside [0, {lx}]",
                base.0, top_x
            )));
        }
    } else if !(0.0..=lx).contains(&base.0) {
        return Err(MicpError::Geometry(format!(
            "leak anchor x = {} outside [0, {lx}]",
            base.0
        )));
    }
    if leak.y_center - 0.5 * leak.w < -GEOM_EPS || leak.y_center + 0.5 * leak.w > ly + GEOM_EPS {
        return Err(MicpError::Geometry(format!(
            "leak y-extent [{}, {}] outside [0, {ly}]",
            leak.y_center - 0.5 * leak.w,
            leak.y_center + 0.5 * leak.w
        )));
    }

    let dims = spec.dims();
    let nodes = [spec.x.nodes(), spec.y.nodes(), spec.z.nodes()];
    let sizes = [spec.x.sizes(), spec.y.sizes(), spec.z.sizes()];
    let lin = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let n_total = dims[0] * dims[1] * dims[2];

    let mut region = vec![Region::Caprock; n_total];
    let mut leak_count = 0usize;
    for k in 0..dims[2] {
        let zc = 0.5 * (nodes[2][k] + nodes[2][k + 1]);
        for j in 0..dims[1] {
            let yc = 0.5 * (nodes[1][j] + nodes[1][j + 1]);
            for i in 0..dims[0] {
                let xc = 0.5 * (nodes[0][i] + nodes[0][i + 1]);
                let layer = if !has_caprock || zc < lay.h_lower {
                    Region::LowerAquifer
                } else if zc < lay.h_lower + lay.h {
                    Region::Caprock
                } else {
                    Region::UpperAquifer
                };
                let in_leak = leak.contains(base, [xc, yc, zc]);
                let tag = match layer {
                    Region::Caprock if in_leak => Region::Leak,
                    Region::LowerAquifer if !has_caprock && in_leak => Region::Leak,
                    other => other,
                };
                if tag == Region::Leak {
                    leak_count += 1;
                }
                region[lin(i, j, k)] = tag;
            }
        }
    }
    if has_caprock && leak_count == 0 {
        return Err(MicpError::Geometry(
            "leak is thinner than the grid resolves: no caprock cell center lies in the slab".into(),
        ));
    }

    // Boundary: +x faces of aquifer cells on the far side from the well.
    let is_flow = |r: Region| r != Region::Caprock;
    let is_boundary_cell =
        |i: usize, r: Region| i + 1 == dims[0] && matches!(r, Region::LowerAquifer | Region::UpperAquifer);

    // Keep only cells connected to a boundary face.
    let mut keep = vec![false; n_total];
    let mut queue = VecDeque::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let i = dims[0] - 1;
            let id = lin(i, j, k);
            if is_flow(region[id]) && is_boundary_cell(i, region[id]) {
                keep[id] = true;
                queue.push_back([i, j, k]);
            }
        }
    }
    while let Some([i, j, k]) = queue.pop_front() {
        let mut visit = |ii: usize, jj: usize, kk: usize| {
            let id = lin(ii, jj, kk);
            if !keep[id] && is_flow(region[id]) {
                keep[id] = true;
                queue.push_back([ii, jj, kk]);
            }
        };
        if i > 0 {
            visit(i - 1, j, k);
        }
        if i + 1 < dims[0] {
            visit(i + 1, j, k);
        }
        if j > 0 {
            visit(i, j - 1, k);
        }
        if j + 1 < dims[1] {
            visit(i, j + 1, k);
        }
        if k > 0 {
            visit(i, j, k - 1);
        }
        if k + 1 < dims[2] {
            visit(i, j, k + 1);
        }
    }

    let rock = &reservoir.rock;
    let mut active = vec![None; n_total];
    let mut cells = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let id = lin(i, j, k);
                if !keep[id] {
                    continue;
                }
                let size = [sizes[0][i], sizes[1][j], sizes[2][k]];
                let center = [
                    0.5 * (nodes[0][i] + nodes[0][i + 1]),
                    0.5 * (nodes[1][j] + nodes[1][j + 1]),
                    0.5 * (nodes[2][k] + nodes[2][k + 1]),
                ];
                let perm0 = if region[id] == Region::Leak {
                    leak.k_l
                } else {
                    rock.k_0
                };
                active[id] = Some(cells.len());
                cells.push(Cell {
                    ijk: [i, j, k],
                    center,
                    size,
                    volume: size[0] * size[1] * size[2],
                    region: region[id],
                    perm0,
                    poro0: rock.phi_0,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(MicpError::EmptyDomain);
    }

    let mut faces = Vec::new();
    let mut cell_faces = vec![Vec::new(); cells.len()];
    for (a, cell) in cells.iter().enumerate() {
        let [i, j, k] = cell.ijk;
        let nbrs = [
            (0usize, i + 1 < dims[0], [i + 1, j, k]),
            (1, j + 1 < dims[1], [i, j + 1, k]),
            (2, k + 1 < dims[2], [i, j, k + 1]),
        ];
        for (axis, exists, nb) in nbrs {
            if !exists {
                continue;
            }
            let Some(b) = active[lin(nb[0], nb[1], nb[2])] else {
                continue;
            };
            let other = &cells[b];
            let mut center = cell.center;
            center[axis] = nodes[axis][cell.ijk[axis] + 1];
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let f = faces.len();
            faces.push(Face {
                cells: (a, b),
                axis,
                area: cell.size[u] * cell.size[v],
                half: (0.5 * cell.size[axis], 0.5 * other.size[axis]),
                center,
            });
            cell_faces[a].push((f, 1.0));
            cell_faces[b].push((f, -1.0));
        }
    }
    for list in cell_faces.iter_mut() {
        list.sort_by_key(|&(f, _)| f);
    }

    let mut boundary_faces = Vec::new();
    let mut cell_boundaries = vec![Vec::new(); cells.len()];
    for (c, cell) in cells.iter().enumerate() {
        if is_boundary_cell(cell.ijk[0], cell.region) {
            let mut center = cell.center;
            center[0] = lx;
            cell_boundaries[c].push(boundary_faces.len());
            boundary_faces.push(BoundaryFace {
                cell: c,
                axis: 0,
                sign: 1.0,
                area: cell.size[1] * cell.size[2],
                half: 0.5 * cell.size[0],
                center,
            });
        }
    }

    let wi = spec.x.locate(lay.well_x);
    let wj = spec.y.locate(lay.well_y);
    let well_cells: Vec<usize> = (0..dims[2])
        .filter_map(|k| active[lin(wi, wj, k)])
        .filter(|&c| !has_caprock || cells[c].region == Region::LowerAquifer)
        .collect();
    if well_cells.is_empty() {
        return Err(MicpError::Geometry(format!(
            "no active lower-aquifer cell at the well position ({}, {})",
            lay.well_x, lay.well_y
        )));
    }

    Ok(Grid {
        dims,
        nodes,
        gravity: spec.gravity,
        cells,
        faces,
        boundary_faces,
        well_cells,
        active,
        cell_faces,
        cell_boundaries,
        p_bdry: lay.p_bdry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_reservoir(well_x: f64) -> ReservoirSpec {
        ReservoirSpec {
            layout: Layout {
                h_lower: 1.0,
                h: 0.0,
                h_upper: 0.0,
                well_x,
                well_y: 0.5,
                p_bdry: 1e7,
            },
            rock: RockLaw::default(),
        }
    }

    fn zone_leak() -> LeakSpec {
        LeakSpec {
            anchor_x: 15.0,
            a: 5.0,
            w: 1.0,
            y_center: 0.5,
            theta: 90.0,
            g_l: 15.0,
            g_u: 5.0,
            l: 15.0,
            k_l: 2e-14,
        }
    }

    #[test]
    fn one_dimensional_leak_zone() {
        let spec = DomainSpec::uniform([100, 1, 1], [1.0; 3]);
        let g = build_domain(&spec, &zone_leak(), &column_reservoir(0.5)).unwrap();
        assert_eq!(g.n_active(), 100);
        let leak: Vec<usize> = g.leak_cells().collect();
        assert_eq!(leak.len(), 5);
        for c in leak {
            let x = g.cells[c].center[0];
            assert!((13.0..=18.0).contains(&x));
            assert_eq!(g.cells[c].perm0, 2e-14);
        }
        assert_eq!(g.faces.len(), 99);
        assert_eq!(g.boundary_faces.len(), 1);
        assert_eq!(g.well_cells, vec![0]);
        assert!((g.total_volume() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn transmissibility_examples() {
        let spec = DomainSpec::uniform([2, 1, 1], [1.0; 3]);
        let mut leak = zone_leak();
        leak.anchor_x = 0.0;
        leak.a = 0.1;
        let g = build_domain(&spec, &leak, &column_reservoir(0.5)).unwrap();
        let f = &g.faces[0];
        let t = face_transmissibility(&g, &[1e-14, 1e-14], f).unwrap();
        assert!((t - 1e-14).abs() < 1e-28);
        let t = face_transmissibility(&g, &[1e-14, 2e-14], f).unwrap();
        assert!((t - 4.0 / 3.0 * 1e-14).abs() < 1e-27);
        let t_swap = face_transmissibility(&g, &[2e-14, 1e-14], f).unwrap();
        assert_eq!(t, t_swap);
        let t = face_transmissibility(&g, &[1e-14, 1e-30], f).unwrap();
        assert!(t < 1e-29);
        assert!(face_transmissibility(&g, &[1e-14, 0.0], f).is_err());
    }

    fn two_aquifer(ny: usize, w: f64, theta: f64) -> (DomainSpec, LeakSpec, ReservoirSpec) {
        let spec = DomainSpec {
            x: Axis(vec![(100, 0.5)]),
            y: Axis::uniform(ny, 20.0 / ny as f64),
            z: Axis(vec![(5, 1.0), (40, 0.5), (5, 1.0)]),
            gravity: default_gravity(),
        };
        let leak = LeakSpec {
            anchor_x: 30.0,
            a: 1.0,
            w,
            y_center: 10.0,
            theta,
            g_l: 15.0,
            g_u: 5.0,
            l: 15.0,
            k_l: 2e-14,
        };
        let res = ReservoirSpec {
            layout: Layout {
                h_lower: 5.0,
                h: 20.0,
                h_upper: 5.0,
                well_x: 0.25,
                well_y: 10.0,
                p_bdry: 1e7,
            },
            rock: RockLaw::default(),
        };
        (spec, leak, res)
    }

    #[test]
    fn vertical_full_width_leak_is_a_slab() {
        let (spec, mut leak, res) = two_aquifer(4, 20.0, 90.0);
        leak.anchor_x = 20.0;
        let g = build_domain(&spec, &leak, &res).unwrap();
        let xs: std::collections::BTreeSet<u64> = g
            .leak_cells()
            .map(|c| (g.cells[c].center[0] * 1000.0).round() as u64)
            .collect();
        // |x - 20.25| <= 0.5 with 0.5 m cells: centers 19.75 and 20.25, 20.75.
        assert_eq!(xs.len(), 3);
        assert_eq!(g.leak_cells().count(), 3 * 4 * 40);
    }

    #[test]
    fn tilted_leak_matches_brute_force_slab_test() {
        let (spec, leak, res) = two_aquifer(4, 6.0, 135.0);
        let g = build_domain(&spec, &leak, &res).unwrap();
        let base = (res.layout.well_x + leak.anchor_x, res.layout.h_lower);
        let (cx, cz) = ((135f64).to_radians().cos(), (135f64).to_radians().sin());
        let nodes = [spec.x.nodes(), spec.y.nodes(), spec.z.nodes()];
        let mut expected = 0;
        for k in 0..spec.z.len() {
            let z = 0.5 * (nodes[2][k] + nodes[2][k + 1]);
            if !(5.0..25.0).contains(&z) {
                continue;
            }
            for j in 0..spec.y.len() {
                let y = 0.5 * (nodes[1][j] + nodes[1][j + 1]);
                for i in 0..spec.x.len() {
                    let x = 0.5 * (nodes[0][i] + nodes[0][i + 1]);
                    let d = ((x - base.0) * cz - (z - base.1) * cx).abs();
                    if d <= 0.5 && (y - 10.0).abs() <= 3.0 {
                        expected += 1;
                    }
                }
            }
        }
        assert!(expected > 0);
        assert_eq!(g.leak_cells().count(), expected);
        // Every leak cell is reachable, so the band connects both aquifers.
        assert!(g
            .cells
            .iter()
            .any(|c| c.region == Region::Leak && (c.center[2] - 24.75).abs() < 1e-9));
    }

    #[test]
    fn volume_closure() {
        let (spec, leak, res) = two_aquifer(4, 6.0, 135.0);
        let g = build_domain(&spec, &leak, &res).unwrap();
        let leak_volume: f64 = g.leak_cells().map(|c| g.cells[c].volume).sum();
        let analytic = 50.0 * 20.0 * 10.0 + leak_volume;
        assert!((g.total_volume() - analytic).abs() / analytic < 1e-12);
    }

    #[test]
    fn leak_outside_caprock_is_rejected() {
        let (spec, mut leak, res) = two_aquifer(4, 6.0, 135.0);
        leak.anchor_x = 5.0;
        assert!(matches!(
            build_domain(&spec, &leak, &res),
            Err(MicpError::Geometry(_))
        ));
    }

    #[test]
    fn unresolved_thin_leak_is_rejected() {
        let (mut spec, mut leak, res) = two_aquifer(4, 6.0, 90.0);
        spec.x = Axis::uniform(10, 5.0);
        leak.a = 0.1;
        leak.anchor_x = 1.0;
        assert!(matches!(
            build_domain(&spec, &leak, &res),
            Err(MicpError::Geometry(_))
        ));
    }
}
