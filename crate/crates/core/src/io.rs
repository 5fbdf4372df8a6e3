//! CSV readers and writers for the file formats the CLI exchanges:
//! long-format observations (`curve_id,time,value`), a response table
//! (`curve_id,y`), and dense wide-format curve matrices.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::func_data::{Grid, SparseCurve, SparseFunctionalDataset};

/// Read a long-format observation CSV with header `curve_id,time,value`.
/// Curves are keyed by their id strings; observations are sorted by time
/// within each curve. Returns the dataset together with the curve ids in
/// the order the curves are stored.
pub fn read_long_csv(path: &Path) -> Result<(SparseFunctionalDataset, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path).map_err(|e| csv_error(&e))?;
    check_header(&mut rdr, &["curve_id", "time", "value"], path)?;
    let mut by_curve: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: "expected columns curve_id,time,value".into(),
            });
        }
        let id = record[0].to_string();
        let time = parse_field(&record[1], "time", line)?;
        let value = parse_field(&record[2], "value", line)?;
        by_curve.entry(id).or_default().push((time, value));
    }
    if by_curve.is_empty() {
        return Err(Error::invalid(format!("{}: no observations", path.display())));
    }
    let mut ids = Vec::with_capacity(by_curve.len());
    let mut curves = Vec::with_capacity(by_curve.len());
    for (id, mut obs) in by_curve {
        obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // merge exact-duplicate times by averaging so the curve invariant holds
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(obs.len());
        for (t, v) in obs {
            if let Some(last) = merged.last_mut() {
                if last.0 == t {
                    last.1 = 0.5 * (last.1 + v);
                    continue;
                }
            }
            merged.push((t, v));
        }
        curves.push(SparseCurve::new(merged)?);
        ids.push(id);
    }
    Ok((SparseFunctionalDataset::new(curves, None, None)?, ids))
}

/// Read a response CSV with header `curve_id,y` into an id → value map.
pub fn read_response_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path).map_err(|e| csv_error(&e))?;
    check_header(&mut rdr, &["curve_id", "y"], path)?;
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: "expected columns curve_id,y".into(),
            });
        }
        let y = parse_field(&record[1], "y", line)?;
        out.insert(record[0].to_string(), y);
    }
    Ok(out)
}

/// Write a long-format observation CSV.
pub fn write_long_csv(
    path: &Path,
    ds: &SparseFunctionalDataset,
    ids: Option<&[String]>,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "curve_id,time,value")?;
    for (i, curve) in ds.curves.iter().enumerate() {
        let id = ids
            .map(|v| v[i].clone())
            .unwrap_or_else(|| i.to_string());
        for &(t, x) in curve.observations() {
            writeln!(f, "{id},{t},{x}")?;
        }
    }
    Ok(())
}

/// Write a dense wide-format curve matrix: header `curve_id,t0,...`, one
/// row per curve with full-precision values.
pub fn write_wide_csv(
    path: &Path,
    matrix: &Array2<f64>,
    grid: &Grid,
    ids: Option<&[String]>,
) -> Result<()> {
    if matrix.ncols() != grid.len() {
        return Err(Error::invalid("matrix width does not match grid"));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "curve_id")?;
    for t in grid.points() {
        write!(f, ",{t}")?;
    }
    writeln!(f)?;
    for i in 0..matrix.nrows() {
        match ids {
            Some(v) => write!(f, "{}", v[i])?,
            None => write!(f, "{i}")?,
        }
        for j in 0..matrix.ncols() {
            write!(f, ",{}", matrix[[i, j]])?;
        }
        writeln!(f)?;
    }
    Ok(())
}

/// Read a dense wide-format curve matrix; the header's time columns become
/// the grid.
pub fn read_wide_csv(path: &Path) -> Result<(Array2<f64>, Grid, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path).map_err(|e| csv_error(&e))?;
    let headers = rdr.headers().map_err(|e| csv_error(&e))?.clone();
    if headers.len() < 3 || &headers[0] != "curve_id" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header curve_id,<t1>,<t2>,...".into(),
        });
    }
    let mut pts = Vec::with_capacity(headers.len() - 1);
    for h in headers.iter().skip(1) {
        pts.push(h.parse::<f64>().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad time column {h:?}"),
        })?);
    }
    let grid = Grid::new(pts)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ids = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != grid.len() + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, got {}", grid.len() + 1, record.len()),
            });
        }
        ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(grid.len());
        for j in 1..record.len() {
            row.push(parse_field(&record[j], "value", line)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: no rows", path.display())));
    }
    let n = rows.len();
    let m = grid.len();
    let matrix = Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]);
    Ok((matrix, grid, ids))
}

/// Write a response CSV (`curve_id,y`).
pub fn write_response_csv(path: &Path, y: &[f64], ids: Option<&[String]>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "curve_id,y")?;
    for (i, v) in y.iter().enumerate() {
        match ids {
            Some(idv) => writeln!(f, "{},{v}", idv[i])?,
            None => writeln!(f, "{i},{v}")?,
        }
    }
    Ok(())
}

fn check_header(
    rdr: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
    path: &Path,
) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_error(&e))?;
    let got: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "{}: expected header {:?}, got {:?}",
                path.display(),
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn parse_field(s: &str, name: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} value {s:?}"),
    })
}

fn csv_error(e: &csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line() as usize,
        None => 0,
    };
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}
