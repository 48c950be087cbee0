//! File formats: trajectories, matrices and numeric tables as CSV; systems,
//! measures, kernels and configurations as JSON.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! emitted file reads back bit for bit.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use behavioral_core::moments::MomentTable;
use behavioral_core::system::Trajectory;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path, flexible: bool) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().flexible(flexible).from_writer(BufWriter::new(file)))
}

fn records(path: &Path, has_headers: bool) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    let header = if has_headers {
        reader
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::csv(path, e))?;
    Ok((header, rows))
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| CliError::format(path, format!("'{field}' is not a number")))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn put(path: &Path, w: &mut csv::Writer<BufWriter<File>>, fields: Vec<String>) -> Result<()> {
    w.write_record(&fields).map_err(|e| CliError::csv(path, e))
}

/// Header `t,x1..xn,u1..um,y1..yp`; the final row `t = T` leaves the input
/// and output fields empty.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let (n_x, n_u, n_y) = (traj.state_dim(), traj.input_dim(), traj.output_dim());
    let mut w = writer(path, false)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_x).map(|i| format!("x{i}")));
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    header.extend((1..=n_y).map(|i| format!("y{i}")));
    put(path, &mut w, header)?;
    for t in 0..=traj.horizon() {
        let mut row = vec![t.to_string()];
        row.extend(traj.states()[t].iter().map(f64::to_string));
        if t < traj.horizon() {
            row.extend(traj.inputs()[t].iter().map(f64::to_string));
            row.extend(traj.outputs()[t].iter().map(f64::to_string));
        } else {
            row.extend(std::iter::repeat(String::new()).take(n_u + n_y));
        }
        put(path, &mut w, row)?;
    }
    finish(path, w)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let (header, rows) = records(path, true)?;
    let count = |prefix: char| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n_x, n_u, n_y) = (count('x'), count('u'), count('y'));
    if header.first().map(String::as_str) != Some("t") || header.len() != 1 + n_x + n_u + n_y {
        return Err(CliError::format(path, "expected header t,x1..,u1..,y1.."));
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "trajectory has no rows"));
    }
    let horizon = rows.len() - 1;
    let (mut states, mut inputs, mut outputs) = (Vec::new(), Vec::new(), Vec::new());
    for (t, rec) in rows.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(CliError::format(path, format!("row {t} has {} fields", rec.len())));
        }
        let vals = |lo: usize, n: usize| (lo..lo + n).map(|i| parse_f64(path, &rec[i])).collect::<Result<Vec<_>>>();
        states.push(vals(1, n_x)?);
        if t < horizon {
            inputs.push(vals(1 + n_x, n_u)?);
            outputs.push(vals(1 + n_x + n_u, n_y)?);
        }
    }
    Ok(Trajectory::new(states, inputs, outputs)?)
}

/// First line `rows,cols`, then one line per matrix row.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path, true)?;
    put(path, &mut w, vec![m.nrows().to_string(), m.ncols().to_string()])?;
    for r in 0..m.nrows() {
        put(path, &mut w, m.row(r).iter().map(f64::to_string).collect())?;
    }
    finish(path, w)
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (_, rows) = records(path, false)?;
    let dims = rows.first().ok_or_else(|| CliError::format(path, "missing rows,cols line"))?;
    let dim = |i: usize| -> Result<usize> {
        dims.get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::format(path, "first line must be rows,cols"))
    };
    let (nr, nc) = (dim(0)?, dim(1)?);
    if dims.len() != 2 || rows.len() != nr + 1 {
        return Err(CliError::format(path, format!("expected {nr} data rows after the rows,cols line")));
    }
    let mut m = DMatrix::zeros(nr, nc);
    for (r, rec) in rows[1..].iter().enumerate() {
        if rec.len() != nc {
            return Err(CliError::format(path, format!("row {r} has {} entries, expected {nc}", rec.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            m[(r, c)] = parse_f64(path, field)?;
        }
    }
    Ok(m)
}

/// Numeric table with a header line.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path, false)?;
    put(path, &mut w, header.iter().map(|h| h.to_string()).collect())?;
    for row in rows {
        if row.len() != header.len() {
            return Err(CliError::format(path, "row length differs from header"));
        }
        put(path, &mut w, row.iter().map(f64::to_string).collect())?;
    }
    finish(path, w)
}

pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = records(path, true)?;
    let rows = rows
        .iter()
        .map(|rec| rec.iter().map(|f| parse_f64(path, f)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Header `i,j,k,value`, one line per mixed moment.
pub fn write_moments_csv(path: &Path, table: &MomentTable) -> Result<()> {
    let mut w = writer(path, false)?;
    put(path, &mut w, ["i", "j", "k", "value"].map(String::from).to_vec())?;
    for (&(i, j, k), v) in table {
        put(path, &mut w, vec![i.to_string(), j.to_string(), k.to_string(), v.to_string()])?;
    }
    finish(path, w)
}

pub fn read_moments_csv(path: &Path) -> Result<MomentTable> {
    let (header, rows) = records(path, true)?;
    if header != ["i", "j", "k", "value"] {
        return Err(CliError::format(path, "expected header i,j,k,value"));
    }
    let mut table = MomentTable::new();
    for rec in &rows {
        if rec.len() != 4 {
            return Err(CliError::format(path, "moment rows have four fields"));
        }
        let idx = |i: usize| -> Result<u32> {
            rec[i]
                .parse()
                .map_err(|_| CliError::format(path, format!("'{}' is not an exponent", &rec[i])))
        };
        table.insert((idx(0)?, idx(1)?, idx(2)?), parse_f64(path, &rec[3])?);
    }
    Ok(table)
}
