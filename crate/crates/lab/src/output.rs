//! Deterministic CSV and JSON output.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64`. JSON objects have sorted keys. Every file carries the SHA-256 of
//! the run manifest.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Parses a float written by [`fmt_f64`] (or any Rust float literal).
pub fn parse_f64(s: &str) -> Result<f64, std::num::ParseFloatError> {
    s.trim().parse()
}

/// The run manifest: canonical configuration, code version and a note on
/// the floating-point model.
#[derive(Debug, Clone)]
pub struct Manifest {
    text: String,
    hash: String,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Self {
        let text = format!(
            "# bubblelab {}\n# floats: IEEE-754 binary64, round-to-nearest; outputs are reproducible on the same platform and build\n{}",
            env!("CARGO_PKG_VERSION"),
            cfg.canonical()
        );
        let digest = Sha256::digest(text.as_bytes());
        let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { text, hash }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, &self.text)
    }
}

/// Path of the manifest written next to an output file.
pub fn manifest_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    out.with_file_name(name)
}

/// A CSV table with a fixed header; the first line is a `#` comment with
/// the manifest hash.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl CsvWriter<BufWriter<File>> {
    pub fn create(path: &Path, manifest: &Manifest, header: &[&str]) -> io::Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), manifest, header)
    }
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, manifest: &Manifest, header: &[&str]) -> io::Result<Self> {
        writeln!(out, "# manifest_sha256={}", manifest.hash())?;
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    /// Writes one row of already formatted fields.
    pub fn row(&mut self, fields: &[String]) -> io::Result<()> {
        if fields.len() != self.columns {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("row has {} fields, header has {}", fields.len(), self.columns),
            ));
        }
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A parsed CSV written by [`CsvWriter`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub manifest_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut manifest_hash = None;
        let mut header = None;
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if let Some(c) = line.strip_prefix('#') {
                if let Some(h) = c.trim().strip_prefix("manifest_sha256=") {
                    manifest_hash = Some(h.to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            match &header {
                None => header = Some(fields),
                Some(h) => {
                    if fields.len() != h.len() {
                        return Err(format!("line {}: {} fields, expected {}", k + 1, fields.len(), h.len()));
                    }
                    rows.push(fields);
                }
            }
        }
        Ok(Self {
            manifest_hash,
            header: header.ok_or("missing header")?,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as floats.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>, String> {
        let c = self.column(name).ok_or_else(|| format!("missing column `{name}`"))?;
        self.rows
            .iter()
            .map(|r| parse_f64(&r[c]).map_err(|e| format!("column `{name}`: `{}`: {e}", r[c])))
            .collect()
    }
}

/// A JSON float; non-finite values become `null`.
pub fn jf(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// Writes a JSON summary with `manifest_sha256` added. Keys are sorted.
pub fn write_summary(path: &Path, manifest: &Manifest, mut body: Map<String, Value>) -> io::Result<()> {
    body.insert("manifest_sha256".into(), Value::String(manifest.hash().into()));
    let mut text = serde_json::to_string_pretty(&Value::Object(body)).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// One acceptance verdict: a measured value, its target and whether it
/// passed.
pub fn verdict(pass: bool, measured: Value, target: &str) -> Value {
    let mut m = Map::new();
    m.insert("pass".into(), Value::Bool(pass));
    m.insert("measured".into(), measured);
    m.insert("target".into(), Value::String(target.into()));
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 4.0 * std::f64::consts::PI] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap(), x);
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse_f64(&fmt_f64(f64::INFINITY)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_series_is_header_only() {
        let m = Manifest::new(&RunConfig::default());
        let w = CsvWriter::new(Vec::new(), &m, &["t", "energy"]).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let t = CsvTable::parse(&text).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.header, ["t", "energy"]);
        assert_eq!(t.manifest_hash.as_deref(), Some(m.hash()));
    }

    #[test]
    fn row_width_is_checked() {
        let m = Manifest::new(&RunConfig::default());
        let mut w = CsvWriter::new(Vec::new(), &m, &["a", "b"]).unwrap();
        assert!(w.row(&["1".into()]).is_err());
    }

    #[test]
    fn manifest_hash_tracks_config() {
        let a = Manifest::new(&RunConfig::default());
        let b = Manifest::new(&RunConfig {
            seed: 1,
            ..RunConfig::default()
        });
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Manifest::new(&RunConfig::default()).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn json_keys_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let m = Manifest::new(&RunConfig::default());
        let mut body = Map::new();
        body.insert("zeta".into(), jf(1.0));
        body.insert("alpha".into(), jf(f64::NAN));
        write_summary(&p, &m, body).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let a = text.find("alpha").unwrap();
        let mh = text.find("manifest_sha256").unwrap();
        let z = text.find("zeta").unwrap();
        assert!(a < mh && mh < z);
        assert!(text.contains("\"alpha\": null"));
    }
}
