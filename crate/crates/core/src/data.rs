//! Row-major datasets with an optional observed-missingness mask.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n x d` inputs, `n` targets, and `N` (true = entry unavailable).
///
/// Values underneath missing entries are retained so oracles can still see
/// them; consumers that train or impute must honour the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub missing: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if d == 0 || x.len() != y.len() * d {
            return Err(Error::Shape(format!(
                "{} inputs do not form {} rows of width {d}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self {
            d,
            x,
            y,
            missing: None,
        })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            d,
            x: Vec::new(),
            y: Vec::new(),
            missing: None,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn row_missing(&self, i: usize) -> Option<&[bool]> {
        self.missing
            .as_ref()
            .map(|m| &m[i * self.d..(i + 1) * self.d])
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing.as_ref().is_some_and(|m| m[i * self.d + j])
    }

    pub fn with_missing(mut self, missing: Vec<bool>) -> Result<Self> {
        if missing.len() != self.x.len() {
            return Err(Error::LengthMismatch {
                expected: self.x.len(),
                actual: missing.len(),
            });
        }
        self.missing = Some(missing);
        Ok(self)
    }

    pub fn missing_fraction(&self) -> f64 {
        match &self.missing {
            None => 0.0,
            Some(m) if m.is_empty() => 0.0,
            Some(m) => m.iter().filter(|&&b| b).count() as f64 / m.len() as f64,
        }
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let d = self.d;
        Self {
            d,
            x: self.x[start * d..end * d].to_vec(),
            y: self.y[start..end].to_vec(),
            missing: self
                .missing
                .as_ref()
                .map(|m| m[start * d..end * d].to_vec()),
        }
    }

    /// Keeps only the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let n = self.len();
        let mut x = Vec::with_capacity(n * cols.len());
        let mut missing = self
            .missing
            .as_ref()
            .map(|_| Vec::with_capacity(n * cols.len()));
        for i in 0..n {
            for &c in cols {
                x.push(self.x[i * self.d + c]);
                if let Some(m) = missing.as_mut() {
                    m.push(self.is_missing(i, c));
                }
            }
        }
        Self {
            d: cols.len(),
            x,
            y: self.y.clone(),
            missing,
        }
    }

    /// Rows with no missing entry.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.row_missing(i).is_some_and(|m| m.iter().any(|&b| b)))
            .collect()
    }

    /// Writes `x1..xd,y` with missing entries as empty fields.
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header: Vec<String> = names.to_vec();
        header.push("y".into());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.d + 1);
        for i in 0..self.len() {
            rec.clear();
            for j in 0..self.d {
                if self.is_missing(i, j) {
                    rec.push(String::new());
                } else {
                    rec.push(fmt_f64(self.x[i * self.d + j]));
                }
            }
            rec.push(fmt_f64(self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Writes the observed mask as `0`/`1` columns.
    pub fn write_mask_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(names)?;
        for i in 0..self.len() {
            let rec: Vec<&str> = (0..self.d)
                .map(|j| if self.is_missing(i, j) { "1" } else { "0" })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV whose last column is the target. Empty input fields are
    /// marked missing; the target must always be present.
    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Self)> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 2 {
            return Err(Error::Shape(format!(
                "{}: need at least one input column and a target",
                path.display()
            )));
        }
        let d = header.len() - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut missing = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::Shape(format!(
                    "{} row {}: {} fields, expected {}",
                    path.display(),
                    line + 2,
                    rec.len(),
                    d + 1
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let field = field.trim();
                let parse = |s: &str| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Shape(format!(
                            "{} row {} column {}: {s:?} is not a number",
                            path.display(),
                            line + 2,
                            j + 1
                        ))
                    })
                };
                if j == d {
                    if field.is_empty() {
                        return Err(Error::Shape(format!(
                            "{} row {}: missing target",
                            path.display(),
                            line + 2
                        )));
                    }
                    y.push(parse(field)?);
                } else if field.is_empty() {
                    x.push(0.0);
                    missing.push(true);
                } else {
                    x.push(parse(field)?);
                    missing.push(false);
                }
            }
        }
        let names = header[..d].to_vec();
        let mut ds = Dataset::new(d, x, y)?;
        if missing.iter().any(|&b| b) {
            ds.missing = Some(missing);
        }
        Ok((names, ds))
    }
}

/// Shortest round-trip formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
