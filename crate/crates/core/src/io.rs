//! Legacy VTK, CSV and JSON writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::grid::{BoundaryField, BoxGrid, ScalarField, VelocityField};
use crate::optimizer::OptimalityReport;
use crate::state_solver::StateSolution;
use crate::Result;

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Structured-points VTK document with cell data. Vector fields are given
/// as their three cell-centered components.
pub fn vtk_string(grid: &BoxGrid, title: &str, scalars: &[(&str, &ScalarField)], vectors: &[(&str, &[ScalarField; 3])]) -> String {
    let (nx, ny, nz) = grid.shape();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", nx + 1, ny + 1, nz + 1);
    let _ = writeln!(s, "ORIGIN 0 0 0");
    let _ = writeln!(s, "SPACING {} {} {}", num(grid.hx), num(grid.hy), num(grid.hz));
    let _ = writeln!(s, "CELL_DATA {}", nx * ny * nz);
    let order = || (0..nz).flat_map(move |k| (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j, k))));
    for (name, f) in scalars {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for (i, j, k) in order() {
            let _ = writeln!(s, "{}", num(f.data[[i, j, k]]));
        }
    }
    for (name, v) in vectors {
        let _ = writeln!(s, "VECTORS {name} double");
        for (i, j, k) in order() {
            let _ = writeln!(s, "{} {} {}", num(v[0].data[[i, j, k]]), num(v[1].data[[i, j, k]]), num(v[2].data[[i, j, k]]));
        }
    }
    s
}

pub fn state_vtk(grid: &BoxGrid, state: &StateSolution) -> String {
    let u = state.u.cell_centered(grid);
    vtk_string(grid, "convection state", &[("theta", &state.theta), ("p", &state.p)], &[("u", &u)])
}

/// One row per cell: indices, center, cell-centered velocity and scalars.
pub fn cell_fields_csv(grid: &BoxGrid, scalars: &[(&str, &ScalarField)], vectors: &[(&str, &VelocityField)]) -> Result<String> {
    let mut header = vec!["i".to_string(), "j".into(), "k".into(), "x".into(), "y".into(), "z".into()];
    for (n, _) in vectors {
        header.extend((1..=3).map(|c| format!("{n}{c}")));
    }
    header.extend(scalars.iter().map(|(n, _)| n.to_string()));
    let centered: Vec<[ScalarField; 3]> = vectors.iter().map(|(_, v)| v.cell_centered(grid)).collect();
    let (nx, ny, nz) = grid.shape();
    let mut rows = Vec::with_capacity(grid.ncells());
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let x = grid.cell_center(i, j, k);
                let mut r = vec![i.to_string(), j.to_string(), k.to_string(), num(x[0]), num(x[1]), num(x[2])];
                for v in &centered {
                    r.extend(v.iter().map(|c| num(c.data[[i, j, k]])));
                }
                r.extend(scalars.iter().map(|(_, f)| num(f.data[[i, j, k]])));
                rows.push(r);
            }
        }
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(&h, rows)
}

pub fn state_csv(grid: &BoxGrid, state: &StateSolution) -> Result<String> {
    cell_fields_csv(grid, &[("p", &state.p), ("theta", &state.theta)], &[("u", &state.u)])
}

/// One row per velocity node of the staggered layout.
pub fn velocity_faces_csv(grid: &BoxGrid, v: &VelocityField) -> Result<String> {
    let mut rows = Vec::new();
    for c in 0..3 {
        let ax = grid.velocity_axes(c);
        for ((i, j, k), x) in v.c[c].indexed_iter() {
            rows.push(vec![
                (c + 1).to_string(),
                i.to_string(),
                j.to_string(),
                k.to_string(),
                num(ax[0].coord(i)),
                num(ax[1].coord(j)),
                num(ax[2].coord(k)),
                num(*x),
            ]);
        }
    }
    csv_string(&["component", "i", "j", "k", "x", "y", "z", "value"], rows)
}

/// One row per boundary face, keyed by wall, face indices and centroid.
pub fn boundary_field_csv(f: &BoundaryField) -> Result<String> {
    let mut header = vec!["wall", "t0", "t1", "x", "y", "z"];
    let names = ["v1", "v2", "v3"];
    header.extend(names.iter().take(f.ncomp));
    let rows = f.region.faces.iter().enumerate().map(|(n, face)| {
        let mut r = vec![
            format!("{:?}", face.wall),
            face.t[0].to_string(),
            face.t[1].to_string(),
            num(face.centroid[0]),
            num(face.centroid[1]),
            num(face.centroid[2]),
        ];
        r.extend((0..f.ncomp).map(|c| num(f.get(n, c))));
        r
    });
    let rows: Vec<Vec<String>> = rows.collect();
    csv_string(&header, rows)
}

/// `iter, J, step, stationarity` per accepted iterate.
pub fn cost_history_csv(r: &OptimalityReport) -> Result<String> {
    let rows = r.cost_history.iter().enumerate().map(|(i, j)| {
        let step = if i == 0 { String::new() } else { num(r.step_history[i - 1]) };
        let res = r.stationarity_history.get(i).map(|v| num(*v)).unwrap_or_default();
        vec![i.to_string(), num(*j), step, res]
    });
    csv_string(&["iter", "J", "step", "stationarity"], rows.collect::<Vec<_>>())
}

pub fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
