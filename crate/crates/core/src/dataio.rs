//! Matrix and report persistence.
//!
//! Matrices are stored with rows = observables and columns = snapshots,
//! either as CSV (one matrix row per line, 17 significant digits) or in a
//! little-endian binary container:
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"QDMDMAT1"
//! 8       8     rows (u64 LE)
//! 16      8     cols (u64 LE)
//! 24      8*r*c values, f64 LE, row-major
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::SweepReport;

pub const BINARY_MAGIC: &[u8; 8] = b"QDMDMAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` (any case) is CSV; everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path, format: MatrixFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MatrixFormat::Csv => write_csv(m, &mut w),
        MatrixFormat::Binary => write_binary(m, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_csv(m: &DMatrix<f64>, w: &mut impl Write) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{:.16e}", m[(i, j)])?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn write_binary(m: &DMatrix<f64>, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a matrix; `format = None` picks one from the file extension.
pub fn read_matrix(path: &Path, format: Option<MatrixFormat>) -> Result<DMatrix<f64>> {
    let format = format.unwrap_or_else(|| MatrixFormat::from_path(path));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let name = path.display().to_string();
    match format {
        MatrixFormat::Csv => read_csv(reader, &name),
        MatrixFormat::Binary => read_binary(reader, &name),
    }
}

fn read_csv(reader: impl BufRead, name: &str) -> Result<DMatrix<f64>> {
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for (field_no, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(
                    format!("{name}:{}", lineno + 1),
                    format!("field {} is not a number: {field:?}", field_no + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("{name}:{}", lineno + 1),
                    format!("field {} is not finite", field_no + 1),
                ));
            }
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::parse(
                    format!("{name}:{}", lineno + 1),
                    format!("row {} has {width} fields, expected {c}", rows + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(name, "no data rows"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_binary(mut reader: impl Read, name: &str) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 24];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::parse(format!("{name}@0"), "truncated header"))?;
    if &header[..8] != BINARY_MAGIC {
        return Err(Error::parse(format!("{name}@0"), "bad magic"));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes")) as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::parse(format!("{name}@8"), "declared shape overflows"))?;
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(name, e))?;
    if payload.len() != count * 8 {
        return Err(Error::parse(
            format!("{name}@24"),
            format!(
                "shape {rows}x{cols} needs {} payload bytes, found {}",
                count * 8,
                payload.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::parse(
                format!("{name}@{}", 24 + 8 * k),
                format!("entry ({}, {}) is not finite", k / cols.max(1), k % cols.max(1)),
            ));
        }
        values.push(v);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Serializes a report as pretty JSON with lexicographically sorted keys.
pub fn report_to_json(report: &SweepReport) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap
    let value = serde_json::to_value(report)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &SweepReport, path: &Path) -> Result<()> {
    let json = report_to_json(report)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<SweepReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| ((i * 131 + j * 71) as f64 * 0.61).sin() * 10f64.powi((i % 7) as i32 - 3))
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = sample(100, 100);
        write_matrix(&m, &path, MatrixFormat::Binary).unwrap();
        let back = read_matrix(&path, None).unwrap();
        assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 8 * 100 * 100);
    }

    #[test]
    fn csv_round_trip_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = sample(7, 13);
        write_matrix(&m, &path, MatrixFormat::Csv).unwrap();
        let back = read_matrix(&path, None).unwrap();
        assert_eq!(back.shape(), (7, 13));
        for (a, b) in m.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-15 * a.abs());
        }
    }

    #[test]
    fn csv_ragged_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        let err = read_matrix(&path, None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(err.contains(":2"), "{err}");
    }

    #[test]
    fn rejects_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "1,NaN\n").unwrap();
        assert!(matches!(read_matrix(&path, None), Err(Error::Parse { .. })));

        let path = dir.path().join("inf.bin");
        let mut m = sample(2, 2);
        m[(1, 0)] = f64::INFINITY;
        write_matrix(&m, &path, MatrixFormat::Binary).unwrap();
        let err = read_matrix(&path, None).unwrap_err().to_string();
        assert!(err.contains("(1, 0)"), "{err}");
    }

    #[test]
    fn binary_shape_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        let mut bytes = BINARY_MAGIC.to_vec();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_matrix(&path, None), Err(Error::Parse { .. })));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_matrix(&path, None).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_matrix(Path::new("/nonexistent/x.bin"), None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.bin"));
    }
}
