//! CSV tables with a header row. Numbers are written with Rust's shortest
//! round-trip formatting so every file re-parses to the same values.

use std::path::{Path, PathBuf};

use crate::checkpoint::write_atomic;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { path: PathBuf::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn has(&self, names: &[&str]) -> bool {
        names.iter().all(|n| self.column(n).is_some())
    }

    fn err(&self, message: String) -> HarnessError {
        HarnessError::Csv { path: self.path.clone(), message }
    }

    /// Parses column `name` as floats. Errors carry the 1-based file line.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| self.err(format!("no column '{name}'")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].trim()
                    .parse::<f64>()
                    .map_err(|_| self.err(format!("line {}: column '{name}' is not a number: '{}'", i + 2, r[c])))
            })
            .collect()
    }

    pub fn text(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.column(name).ok_or_else(|| self.err(format!("no column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |message: String| HarnessError::Csv { path: path.to_path_buf(), message };
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| err(format!("line 1: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(err("line 1: missing header row".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                err(format!("line {line}: {e}"))
            })?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_values() {
        let mut t = Table::new(&["a", "b"]);
        for v in [0.1, 1.0 / 3.0, 1e-300, f64::NAN, -2.5e10] {
            t.push(vec![fmt_f64(v), "x,y".into()]);
        }
        let back = Table::parse(&t.to_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(back.header, t.header);
        assert_eq!(back.rows, t.rows);
        let a = back.numeric("a").unwrap();
        assert_eq!(a[1], 1.0 / 3.0);
        assert!(a[3].is_nan());
    }

    #[test]
    fn errors_name_the_line() {
        let e = Table::parse(b"a,b\n1,2\n3\n", Path::new("m.csv")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let t = Table::parse(b"a\n1\nzz\n", Path::new("m.csv")).unwrap();
        let e = t.numeric("a").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(Table::parse(b"", Path::new("e.csv")).is_err());
    }
}
