//! Sphere-valued field files.
//!
//! Binary: `N` as little-endian `u64`, then `N^2` samples in row-major order
//! (`i` along `x1`), each three little-endian `f64`.
//!
//! CSV: a `# manifest_sha256=` comment, header `i,j,u1,u2,u3`, one row per
//! sample in the same order.

use std::io;
use std::path::Path;

use bubblelab_core::torus_geometry::{ToroidalField3, ToroidalGrid};

use crate::output::{fmt_f64, CsvTable, CsvWriter, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] bubblelab_core::torus_geometry::GeometryError),
}

pub fn encode_binary(u: &ToroidalField3) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 24 * u.values().len());
    out.extend_from_slice(&(u.grid().n() as u64).to_le_bytes());
    for v in u.values() {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<ToroidalField3, FieldError> {
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| FieldError::Format("shorter than the 8-byte header".into()))?;
    let n = u64::from_le_bytes(head) as usize;
    let expected = n
        .checked_mul(n)
        .and_then(|m| m.checked_mul(24))
        .and_then(|m| m.checked_add(8))
        .ok_or_else(|| FieldError::Format(format!("grid size {n} overflows")))?;
    if bytes.len() != expected {
        return Err(FieldError::Format(format!(
            "N = {n} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let grid = ToroidalGrid::new(n)?;
    let values = bytes[8..]
        .chunks_exact(24)
        .map(|c| {
            let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().expect("8-byte chunk"));
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok(ToroidalField3::new(grid, values)?)
}

pub fn write_csv(path: &Path, u: &ToroidalField3, manifest: &Manifest) -> io::Result<()> {
    let g = u.grid();
    let mut w = CsvWriter::create(path, manifest, &["i", "j", "u1", "u2", "u3"])?;
    for (idx, v) in u.values().iter().enumerate() {
        let (i, j) = g.coords(idx);
        w.row(&[i.to_string(), j.to_string(), fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2])])?;
    }
    w.finish()?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<ToroidalField3, FieldError> {
    let t = CsvTable::parse(text).map_err(FieldError::Format)?;
    let len = t.rows.len();
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(FieldError::Format(format!("{len} rows is not a square grid")));
    }
    let grid = ToroidalGrid::new(n)?;
    let cols: Vec<Vec<f64>> = ["u1", "u2", "u3"]
        .iter()
        .map(|c| t.floats(c))
        .collect::<Result<_, _>>()
        .map_err(FieldError::Format)?;
    let (ci, cj) = (
        t.column("i").ok_or_else(|| FieldError::Format("missing column `i`".into()))?,
        t.column("j").ok_or_else(|| FieldError::Format("missing column `j`".into()))?,
    );
    let mut values = vec![[f64::NAN; 3]; len];
    let mut filled = vec![false; len];
    for (r, row) in t.rows.iter().enumerate() {
        let i: usize = row[ci].parse().map_err(|_| FieldError::Format(format!("bad index `{}`", row[ci])))?;
        let j: usize = row[cj].parse().map_err(|_| FieldError::Format(format!("bad index `{}`", row[cj])))?;
        if i >= n || j >= n || filled[i * n + j] {
            return Err(FieldError::Format(format!("index ({i},{j}) out of range or repeated")));
        }
        filled[i * n + j] = true;
        values[i * n + j] = [cols[0][r], cols[1][r], cols[2][r]];
    }
    Ok(ToroidalField3::new(grid, values)?)
}

/// Reads a field; `.csv` files are parsed as CSV, anything else as binary.
/// The result is checked to be sphere-valued.
pub fn read_field(path: &Path) -> Result<ToroidalField3, FieldError> {
    let u = if path.extension().is_some_and(|e| e == "csv") {
        parse_csv(&std::fs::read_to_string(path)?)?
    } else {
        decode_binary(&std::fs::read(path)?)?
    };
    Ok(u.into_on_sphere()?)
}

pub fn write_field(path: &Path, u: &ToroidalField3, manifest: &Manifest) -> io::Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        write_csv(path, u, manifest)
    } else {
        std::fs::write(path, encode_binary(u))
    }
}
