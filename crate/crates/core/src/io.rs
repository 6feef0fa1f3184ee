//! CSV and JSON artifacts. Numbers are written with 17 significant digits so
//! every file parses back to the exact values.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data_prep::SeriesPanel;
use crate::error::{Error, Result};

/// Round-trip decimal form of a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell(s: &str, row: usize, col: usize) -> Result<f64> {
    let s = s.trim();
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Invalid(format!("cell at row {row}, column {col} is not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite { row, col });
    }
    Ok(v)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(headers).trim(csv::Trim::All).from_reader(f))
}

/// Reads a panel: header of variable names, one row per time point, an
/// optional leading `date` column. Cell positions in errors are 0-based
/// data rows and columns.
pub fn read_panel(path: &Path) -> Result<SeriesPanel> {
    let mut rdr = reader(path, true)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let has_date = header.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let labels: Vec<String> = header[usize::from(has_date)..].to_vec();
    if labels.is_empty() {
        return Err(Error::Dimension(format!("{}: no data columns", path.display())));
    }
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (t, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut cells = rec.iter();
        if has_date {
            dates.push(cells.next().unwrap_or_default().to_string());
        }
        let row = cells
            .enumerate()
            .map(|(j, c)| parse_cell(c, t, j))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let values = DMatrix::from_fn(labels.len(), n, |j, t| rows[t][j]);
    SeriesPanel::new(values, Some(labels), has_date.then_some(dates))
}

pub fn write_panel(path: &Path, panel: &SeriesPanel) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = Vec::new();
    if panel.dates.is_some() {
        header.push("date".into());
    }
    header.extend((0..panel.n_vars()).map(|j| panel.label(j)));
    w.write_record(&header)?;
    for t in 0..panel.n_points() {
        let mut rec: Vec<String> = Vec::new();
        if let Some(d) = &panel.dates {
            rec.push(d[t].clone());
        }
        rec.extend(panel.values.column(t).iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Headerless numeric matrix.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&x| fmt_f64(x)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = reader(path, false)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().enumerate().map(|(j, c)| parse_cell(c, i, j)).collect::<Result<_>>()?);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Writes a header and string rows.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, f64::MAX, 2.0f64.sqrt(), -0.0]);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m.shape(), back.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn panel_round_trips_with_dates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = SeriesPanel::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 1.5, 0.7, 10.0, 11.0, 12.25]),
            Some(vec!["AAA".into(), "BBB".into()]),
            Some(vec!["2020-01-01".into(), "2020-01-02".into(), "2020-01-03".into()]),
        )
        .unwrap();
        write_panel(&path, &p).unwrap();
        assert_eq!(read_panel(&path).unwrap(), p);
    }

    #[test]
    fn bad_cells_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,b\n1,2\n3,NaN\n").unwrap();
        assert!(matches!(read_panel(&path), Err(Error::NonFinite { row: 1, col: 1 })));
        fs::write(&path, "a,b\n1,x\n").unwrap();
        let msg = read_panel(&path).unwrap_err().to_string();
        assert!(msg.contains("row 0, column 1"), "{msg}");
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d");
        fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
