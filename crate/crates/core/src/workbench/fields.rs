//! CSV dump of one grid function: `i,j,phi,r,x,y,value`, one row per node in
//! flat order, indices one-based, reals with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{PolarGrid, ScalarField};

pub const HEADER: &str = "i,j,phi,r,x,y,value";

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let grid = field.grid();
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{HEADER}")?;
        for k in 0..grid.len() {
            let (i, j) = grid.node(k);
            let (x, y) = grid.xy(k);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i + 1,
                j + 1,
                fmt17(grid.phi()[i]),
                fmt17(grid.r()[j]),
                fmt17(x),
                fmt17(y),
                fmt17(field[k])
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a dump back onto `grid`; the row layout has to match the grid exactly.
pub fn read_field(path: &Path, grid: &Arc<PolarGrid>) -> Result<ScalarField> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(bad(format!("expected header {HEADER:?}")));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if k >= grid.len() {
            return Err(bad(format!(
                "more than {} rows for a {}x{} grid",
                grid.len(),
                grid.n_phi(),
                grid.n_radial()
            )));
        }
        let int = |c: usize| -> Result<usize> {
            record[c]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("row {}: {e}", k + 2)))
        };
        let (i, j) = (int(0)?, int(1)?);
        let (ei, ej) = grid.node(k);
        if (i, j) != (ei + 1, ej + 1) {
            return Err(bad(format!(
                "row {}: node ({i},{j}) where ({},{}) was expected",
                k + 2,
                ei + 1,
                ej + 1
            )));
        }
        let v: f64 = record[6]
            .trim()
            .parse()
            .map_err(|e| bad(format!("row {}: {e}", k + 2)))?;
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(bad(format!(
            "{} rows, grid has {} nodes",
            values.len(),
            grid.len()
        )));
    }
    ScalarField::from_values(grid, values)
}
