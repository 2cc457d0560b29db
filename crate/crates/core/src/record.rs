//! Versioned plain-text record used to persist trained models.
//!
//! ```text
//! format qudit-qnn-model
//! version 1
//! dim 5
//! matrix weights 16 24
//! 0.013 -0.2 ...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every weight bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub format: String,
    pub version: u32,
    fields: Vec<(String, String)>,
    matrices: Vec<Matrix>,
}

impl Record {
    pub fn new(format: &str) -> Self {
        Self {
            format: format.to_string(),
            version: RECORD_VERSION,
            fields: Vec::new(),
            matrices: Vec::new(),
        }
    }

    pub fn field(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn matrix(mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        self.matrices.push(Matrix {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::ModelFormat(format!("missing field `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::ModelFormat(format!("field `{key}` has invalid value `{raw}`")))
    }

    pub fn get_matrix(&self, name: &str) -> Result<&Matrix> {
        self.matrices
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::ModelFormat(format!("missing matrix `{name}`")))
    }

    pub fn expect_format(&self, format: &str) -> Result<()> {
        if self.format != format {
            return Err(Error::ModelFormat(format!(
                "expected a `{format}` record, found `{}`",
                self.format
            )));
        }
        if self.version != RECORD_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported record version {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format {}", self.format);
        let _ = writeln!(out, "version {}", self.version);
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k} {v}");
        }
        for m in &self.matrices {
            let _ = writeln!(out, "matrix {} {} {}", m.name, m.rows, m.cols);
            for r in 0..m.rows {
                let row = &m.values[r * m.cols..(r + 1) * m.cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |msg: String| Error::ModelFormat(msg);

        let format = match lines.next().and_then(|l| l.strip_prefix("format ")) {
            Some(f) => f.trim().to_string(),
            None => return Err(bad("record must start with a `format` line".into())),
        };
        let version = match lines.next().and_then(|l| l.strip_prefix("version ")) {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| bad(format!("invalid version `{v}`")))?,
            None => return Err(bad("second line must be `version <n>`".into())),
        };
        let mut record = Record {
            format,
            version,
            fields: Vec::new(),
            matrices: Vec::new(),
        };
        while let Some(line) = lines.next() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if key == "matrix" {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("malformed matrix header `{line}`")));
                }
                let rows: usize = parts[1]
                    .parse()
                    .map_err(|_| bad(format!("bad row count in `{line}`")))?;
                let cols: usize = parts[2]
                    .parse()
                    .map_err(|_| bad(format!("bad column count in `{line}`")))?;
                let mut values = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let row = lines
                        .next()
                        .ok_or_else(|| bad(format!("matrix `{}` truncated at row {r}", parts[0])))?;
                    let before = values.len();
                    for tok in row.split_whitespace() {
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| bad(format!("invalid number `{tok}`")))?;
                        values.push(v);
                    }
                    if values.len() - before != cols {
                        return Err(bad(format!(
                            "matrix `{}` row {r} has {} entries, expected {cols}",
                            parts[0],
                            values.len() - before
                        )));
                    }
                }
                record.matrices.push(Matrix {
                    name: parts[0].to_string(),
                    rows,
                    cols,
                    values,
                });
            } else {
                record.fields.push((key.to_string(), rest.trim().to_string()));
            }
        }
        Ok(record)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let n = values.len();
            let rec = Record::new("test").field("n", n).matrix("m", 1, n, values.clone());
            let back = Record::from_text(&rec.to_text()).unwrap();
            let m = back.get_matrix("m").unwrap();
            for (a, b) in m.values.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn missing_field_reported() {
        let rec = Record::from_text("format x\nversion 1\na 3\n").unwrap();
        assert_eq!(rec.parse::<u32>("a").unwrap(), 3);
        assert!(matches!(rec.get("b"), Err(Error::ModelFormat(_))));
        assert!(rec.expect_format("y").is_err());
    }

    #[test]
    fn truncated_matrix_rejected() {
        let text = "format x\nversion 1\nmatrix w 2 2\n1 2\n";
        assert!(Record::from_text(text).is_err());
        let text = "format x\nversion 1\nmatrix w 1 2\n1 2 3\n";
        assert!(Record::from_text(text).is_err());
    }
}
