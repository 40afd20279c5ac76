//! CSV form of grid fields: one row per active node in lexicographic order,
//! with headers `x1,x2,value`, `x1,x2,v1,v2` or `x1,x2,c11,c12,c21,c22`.

use std::io::{Read, Write};
use std::sync::Arc;

use super::{Grid, MatrixField, ScalarField, VectorField};
use crate::error::{Error, Result};

pub const SCALAR_HEADER: [&str; 3] = ["x1", "x2", "value"];
pub const VECTOR_HEADER: [&str; 4] = ["x1", "x2", "v1", "v2"];
pub const MATRIX_HEADER: [&str; 6] = ["x1", "x2", "c11", "c12", "c21", "c22"];

/// Writes a table whose rows are the grid nodes followed by `columns`.
pub fn write_node_table<W: Write>(
    grid: &Grid,
    header: &[&str],
    columns: &[&[f64]],
    out: W,
) -> Result<()> {
    if header.len() != columns.len() + 2 {
        return Err(Error::InvalidInput("header does not match column count".into()));
    }
    for col in columns {
        if col.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), found: col.len() });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    let mut row = Vec::with_capacity(header.len());
    for (a, x) in grid.points().enumerate() {
        row.clear();
        row.push(x[0].to_string());
        row.push(x[1].to_string());
        row.extend(columns.iter().map(|c| c[a].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scalar<W: Write>(s: &ScalarField, out: W) -> Result<()> {
    write_node_table(s.grid(), &SCALAR_HEADER, &[s.values()], out)
}

pub fn write_vector<W: Write>(v: &VectorField, out: W) -> Result<()> {
    let (c1, c2) = two_components(v);
    write_node_table(v.grid(), &VECTOR_HEADER, &[&c1, &c2], out)
}

pub fn write_matrix<W: Write>(m: &MatrixField, out: W) -> Result<()> {
    let g = m.grid();
    let d = m.dim();
    let entry = |r: usize, c: usize| -> Vec<f64> {
        (0..g.len())
            .map(|a| if r < d && c < d { m.at(a)[r * d + c] } else { 0.0 })
            .collect()
    };
    let cols = [entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1)];
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_node_table(g, &MATRIX_HEADER, &refs, out)
}

pub(crate) fn two_components(v: &VectorField) -> (Vec<f64>, Vec<f64>) {
    let c1 = v.component(0);
    let c2 = if v.dim() > 1 { v.component(1) } else { vec![0.0; c1.len()] };
    (c1, c2)
}

/// Reads a node table, checking header and node coordinates against `grid`.
pub fn read_node_table<R: Read>(grid: &Grid, header: &[&str], input: R) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != header {
        return Err(Error::InvalidInput(format!(
            "expected header {}, found {}",
            header.join(","),
            found.join(",")
        )));
    }
    let tol = 1e-9 * grid.diameter();
    let mut columns = vec![Vec::with_capacity(grid.len()); header.len() - 2];
    let mut count = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::InvalidRecord { line, reason: "missing column".into() })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidRecord { line, reason: e.to_string() })
        };
        if count >= grid.len() {
            return Err(Error::InvalidRecord { line, reason: "more rows than grid nodes".into() });
        }
        let x = grid.point(count);
        let (x1, x2) = (parse(0)?, parse(1)?);
        if (x1 - x[0]).abs() > tol || (x2 - x[1]).abs() > tol {
            return Err(Error::InvalidRecord {
                line,
                reason: format!("node ({x1}, {x2}) does not match grid node ({}, {})", x[0], x[1]),
            });
        }
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(parse(k + 2)?);
        }
        count += 1;
    }
    if count != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), found: count });
    }
    Ok(columns)
}

pub fn read_scalar<R: Read>(grid: &Arc<Grid>, input: R) -> Result<ScalarField> {
    let mut cols = read_node_table(grid, &SCALAR_HEADER, input)?;
    ScalarField::new(grid.clone(), cols.remove(0))
}

pub fn read_vector<R: Read>(grid: &Arc<Grid>, input: R) -> Result<VectorField> {
    let cols = read_node_table(grid, &VECTOR_HEADER, input)?;
    let d = grid.dim();
    let values = (0..grid.len()).flat_map(|a| (0..d).map(|k| cols[k][a]).collect::<Vec<_>>()).collect();
    VectorField::new(grid.clone(), values)
}

/// Reads a matrix field and validates it as SPD.
pub fn read_matrix<R: Read>(grid: &Arc<Grid>, input: R) -> Result<MatrixField> {
    let cols = read_node_table(grid, &MATRIX_HEADER, input)?;
    let d = grid.dim();
    let pick: &[usize] = if d == 1 { &[0] } else { &[0, 1, 2, 3] };
    let values = (0..grid.len()).flat_map(|a| pick.iter().map(|&k| cols[k][a]).collect::<Vec<_>>()).collect();
    MatrixField::new_spd(grid.clone(), values)
}
