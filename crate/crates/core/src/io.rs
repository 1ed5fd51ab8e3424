//! Matrix CSV files and run manifests.
//!
//! Matrices are written one row per line with values in Rust's shortest
//! round-trip decimal form, so reading a file back reproduces every `f64`
//! bit for bit. Row and column numbers in error messages are 1-based.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {col}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },
    #[error("{path}: row {row} has {got} fields, expected {expected}")]
    Ragged {
        path: PathBuf,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    Binary,
    UnitInterval,
    Float,
}

impl ValueDomain {
    fn check(self, v: f64) -> Result<(), String> {
        match self {
            ValueDomain::Binary if v != 0.0 && v != 1.0 => Err(format!("{v} is not 0 or 1")),
            ValueDomain::UnitInterval if !(0.0..=1.0).contains(&v) => {
                Err(format!("{v} is outside [0, 1]"))
            }
            _ if !v.is_finite() => Err(format!("{v} is not finite")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvMatrixFile {
    pub path: PathBuf,
    pub delimiter: u8,
    pub header: bool,
    pub domain: ValueDomain,
}

impl CsvMatrixFile {
    pub fn new(path: impl Into<PathBuf>, domain: ValueDomain) -> Self {
        Self {
            path: path.into(),
            delimiter: b',',
            header: false,
            domain,
        }
    }

    pub fn with_header(mut self, header: bool) -> Self {
        self.header = header;
        self
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }

    pub fn read(&self) -> Result<DenseMatrix, IoError> {
        let text = fs::read_to_string(&self.path).map_err(|source| IoError::File {
            path: self.path.clone(),
            source,
        })?;
        parse_matrix(&text, self.delimiter, self.header, self.domain)
            .map_err(|e| e.with_path(&self.path))
    }
}

/// Parse failure before a path is attached.
#[derive(Debug)]
pub enum ParseFailure {
    Parse { row: usize, col: usize, message: String },
    Ragged { row: usize, expected: usize, got: usize },
    Empty,
}

impl ParseFailure {
    fn with_path(self, path: &Path) -> IoError {
        let path = path.to_path_buf();
        match self {
            ParseFailure::Parse { row, col, message } => IoError::Parse { path, row, col, message },
            ParseFailure::Ragged { row, expected, got } => IoError::Ragged { path, row, expected, got },
            ParseFailure::Empty => IoError::Empty { path },
        }
    }
}

pub fn parse_matrix(
    text: &str,
    delimiter: u8,
    header: bool,
    domain: ValueDomain,
) -> Result<DenseMatrix, ParseFailure> {
    let delim = delimiter as char;
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row_no = line_no + 1;
        let mut count = 0;
        for (c, field) in line.split(delim).enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| ParseFailure::Parse {
                row: row_no,
                col: c + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            domain.check(v).map_err(|message| ParseFailure::Parse {
                row: row_no,
                col: c + 1,
                message,
            })?;
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(expected) if expected != count => {
                return Err(ParseFailure::Ragged {
                    row: row_no,
                    expected,
                    got: count,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or(ParseFailure::Empty)?;
    Ok(DenseMatrix::new(rows, cols, data).expect("validated entries"))
}

pub fn format_matrix(m: &DenseMatrix, delimiter: u8) -> String {
    let delim = (delimiter as char).to_string();
    let mut out = String::with_capacity(m.rows() * m.cols() * 8);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(&delim));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), IoError> {
    write_text(path, &format_matrix(m, b','))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything needed to rerun a command and get the same numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<InputDigest>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let now = unix_ms();
        Self {
            tool: "gom".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            started_unix_ms: now,
            finished_unix_ms: now,
            inputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), IoError> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_ms = unix_ms();
        self
    }
}
