//! Snapshot and time-series files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{MicpError, Result};
use crate::grid::Grid;

/// One named per-cell field.
pub struct Field<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

fn check_fields(grid: &Grid, fields: &[Field]) -> Result<()> {
    for f in fields {
        if f.values.len() != grid.n_active() {
            return Err(MicpError::Assembly(format!(
                "field `{}` has {} values for {} active cells",
                f.name,
                f.values.len(),
                grid.n_active()
            )));
        }
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(MicpError::Assembly(format!("invalid field name `{}`", f.name)));
        }
    }
    Ok(())
}

/// Renders a legacy-format ASCII structured-grid snapshot. Cells outside
/// the flow domain carry 0 in every field and 0 in `active`.
pub fn render_snapshot(grid: &Grid, fields: &[Field], time: f64) -> Result<String> {
    check_fields(grid, fields)?;
    let [nx, ny, nz] = grid.dims;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "micp snapshot t={time:.17e}");
    s.push_str("ASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", nx + 1, ny + 1, nz + 1);
    let _ = writeln!(s, "POINTS {} double", (nx + 1) * (ny + 1) * (nz + 1));
    for z in &grid.nodes[2] {
        for y in &grid.nodes[1] {
            for x in &grid.nodes[0] {
                let _ = writeln!(s, "{x:e} {y:e} {z:e}");
            }
        }
    }
    let n = nx * ny * nz;
    let _ = writeln!(s, "CELL_DATA {n}");
    let mut emit = |name: &str, value: &dyn Fn(usize) -> f64| {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for id in 0..n {
            let v = grid.active[id].map_or(0.0, value);
            let _ = writeln!(s, "{v:.17e}");
        }
    };
    emit("active", &|_| 1.0);
    emit("region", &|c| f64::from(grid.cells[c].region.code()));
    for f in fields {
        emit(f.name, &|c| f.values[c]);
    }
    Ok(s)
}

pub fn write_snapshot(grid: &Grid, fields: &[Field], time: f64, path: &Path) -> Result<()> {
    let text = render_snapshot(grid, fields, time)?;
    fs::write(path, text).map_err(|e| MicpError::io(path, e))
}

/// Per-active-cell fields read back from a snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotData {
    pub time: f64,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl SnapshotData {
    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Reads a snapshot written by [`write_snapshot`] for the same grid.
pub fn read_snapshot(grid: &Grid, path: &Path) -> Result<SnapshotData> {
    let text = fs::read_to_string(path).map_err(|e| MicpError::io(path, e))?;
    let bad = |message: String| MicpError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().enumerate();
    let mut time = 0.0;
    let mut dims = None;
    let mut fields = Vec::new();
    let n_total = grid.dims.iter().product::<usize>();
    while let Some((no, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("micp") => {
                if let Some(t) = line.split("t=").nth(1) {
                    time = t
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("line {}: bad time", no + 1)))?;
                }
            }
            Some("DIMENSIONS") => {
                let d: Vec<usize> = parts.filter_map(|p| p.parse().ok()).collect();
                dims = Some(d);
            }
            Some("SCALARS") => {
                let name = parts
                    .next()
                    .ok_or_else(|| bad(format!("line {}: unnamed field", no + 1)))?
                    .to_string();
                lines.next();
                let mut full = Vec::with_capacity(n_total);
                for _ in 0..n_total {
                    let (no, l) = lines
                        .next()
                        .ok_or_else(|| bad(format!("field `{name}` ends early")))?;
                    full.push(
                        l.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(format!("line {}: not a number", no + 1)))?,
                    );
                }
                let mut values = vec![0.0; grid.n_active()];
                for (id, a) in grid.active.iter().enumerate() {
                    if let Some(c) = a {
                        values[*c] = full[id];
                    }
                }
                fields.push((name, values));
            }
            _ => {}
        }
    }
    let expect = vec![grid.dims[0] + 1, grid.dims[1] + 1, grid.dims[2] + 1];
    if dims.as_ref() != Some(&expect) {
        return Err(bad(format!(
            "grid dimensions {:?} do not match the configured grid {:?}",
            dims, expect
        )));
    }
    Ok(SnapshotData { time, fields })
}

/// CSV with a header row; numbers keep 17 significant digits.
pub fn render_timeseries(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut s = header.join(",");
    s.push('\n');
    let mut last_t = f64::NEG_INFINITY;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(MicpError::Assembly(format!(
                "row {i} has {} columns, header has {}",
                row.len(),
                header.len()
            )));
        }
        if let Some(&t) = row.first() {
            if t < last_t {
                return Err(MicpError::Assembly(format!("row {i}: time goes backwards")));
            }
            last_t = t;
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_timeseries(header: &[&str], rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let text = render_timeseries(header, rows)?;
    fs::write(path, text).map_err(|e| MicpError::io(path, e))
}
