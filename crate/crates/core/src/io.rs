//! Plain-text artifact formats: matrix files, key=value headers, CSV tables.
//!
//! Matrix file: first line `rows cols`, then one line per row with
//! space-separated values written with 17 significant digits so that every
//! `f64` survives a write/read round trip bit-for-bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dense::{DenseMatrix, DenseVector};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing key `{key}`")]
    MissingKey { path: PathBuf, key: String },
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn matrix_to_string(m: &DenseMatrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 25 + 16);
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<DenseMatrix> {
    let parse_err = |line: usize, message: String| FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(1, format!("header must be `rows cols`, got `{header}`")));
    };
    let mut m = DenseMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (idx, line) in lines {
        if seen == rows {
            return Err(parse_err(idx + 1, "more rows than declared".into()));
        }
        let mut count = 0;
        for (j, tok) in line.split_whitespace().enumerate() {
            if j >= cols {
                return Err(parse_err(idx + 1, format!("expected {cols} values")));
            }
            m[(seen, j)] = tok
                .parse::<f64>()
                .map_err(|e| parse_err(idx + 1, format!("`{tok}`: {e}")))?;
            count += 1;
        }
        if count != cols {
            return Err(parse_err(idx + 1, format!("expected {cols} values, got {count}")));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(0, format!("expected {rows} rows, got {seen}")));
    }
    Ok(m)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_text(path, &matrix_to_string(m))
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    parse_matrix(&read_text(path)?, path)
}

/// Vectors are stored as a single column.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_matrix(path, &DenseMatrix::from_col_major(v.len(), 1, v.to_vec()))
}

pub fn read_vector(path: &Path) -> Result<DenseVector> {
    let m = read_matrix(path)?;
    if m.cols() != 1 {
        return Err(FormatError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("vector file must have one column, got {}", m.cols()),
        });
    }
    Ok(DenseVector::from(m.as_slice()))
}

/// Ordered `key=value` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_string())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.entries.insert(key.into(), fmt_f64(value));
    }

    pub fn set_list(&mut self, key: impl Into<String>, values: &[f64]) {
        let s: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.entries.insert(key.into(), s.join(","));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key).ok_or_else(|| FormatError::MissingKey {
            path: path.to_path_buf(),
            key: key.to_string(),
        })
    }

    pub fn require_parsed<T>(&self, key: &str, path: &Path) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key, path)?;
        raw.parse::<T>().map_err(|e| FormatError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("key `{key}`: `{raw}`: {e}"),
        })
    }

    pub fn require_list(&self, key: &str, path: &Path) -> Result<Vec<f64>> {
        parse_list(self.require(key, path)?).map_err(|message| FormatError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("key `{key}`: {message}"),
        })
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Comma- or whitespace-separated reals; an empty string is an empty list.
pub fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// CSV writer with the fixed numeric format.
pub struct CsvTable {
    text: String,
}

impl CsvTable {
    pub fn new(header: &[String]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn push_row(&mut self, leading: &[String], values: &[f64]) {
        let mut first = true;
        for cell in leading {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(cell);
            first = false;
        }
        for &v in values {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(&fmt_f64(v));
            first = false;
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}

/// Parses a numeric CSV (header skipped) into rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FormatError::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok((header, rows))
}
