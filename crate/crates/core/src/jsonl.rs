//! Line-delimited JSON persistence for pipeline records.
//!
//! One canonical JSON object per line. Struct fields serialise in
//! declaration order, maps in key order, and reals in the shortest decimal
//! form that round-trips exactly, so writing the same records twice yields
//! byte-identical files. Unknown keys fail the read.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::types::Validate;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("write to {path} failed after {written} records: {source}")]
    Write {
        path: PathBuf,
        written: usize,
        source: std::io::Error,
    },
    #[error("{path}:{line}: read failed: {source}")]
    Read {
        path: PathBuf,
        line: usize,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: invalid `{field}`: {message}")]
    Invariant {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}:{line}: duplicate key `{key}`")]
    Duplicate {
        path: PathBuf,
        line: usize,
        key: String,
    },
}

impl JsonlError {
    /// 1-based line number the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Read { line, .. }
            | JsonlError::Parse { line, .. }
            | JsonlError::Invariant { line, .. }
            | JsonlError::Duplicate { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Serialises one record to its canonical line (without the newline).
pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("pipeline records always serialise")
}

/// Writes `records` to `path`, replacing any existing file.
pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|source| JsonlError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let mut written = 0;
    for record in records {
        let line = to_line(record);
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|source| JsonlError::Write {
                path: path.to_path_buf(),
                written,
                source,
            })?;
        written += 1;
    }
    out.flush().map_err(|source| JsonlError::Write {
        path: path.to_path_buf(),
        written,
        source,
    })?;
    Ok(written)
}

/// Parses one line and runs the record's invariant checks.
pub fn parse_line<T>(path: &Path, line_no: usize, line: &str) -> Result<T, JsonlError>
where
    T: DeserializeOwned + Validate,
{
    let record: T = serde_json::from_str(line).map_err(|e| JsonlError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    record.validate().map_err(|e| JsonlError::Invariant {
        path: path.to_path_buf(),
        line: line_no,
        field: e.field,
        message: e.message,
    })?;
    Ok(record)
}

/// Reads and validates every record in `path`.
///
/// Blank lines are skipped. For types with a unique key (documents), a
/// repeated key is rejected.
pub fn read_jsonl<T>(path: &Path) -> Result<Vec<T>, JsonlError>
where
    T: DeserializeOwned + Validate,
{
    let file = File::open(path).map_err(|source| JsonlError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| JsonlError::Read {
            path: path.to_path_buf(),
            line: line_no,
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = parse_line(path, line_no, &line)?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.to_string()) {
                return Err(JsonlError::Duplicate {
                    path: path.to_path_buf(),
                    line: line_no,
                    key: key.to_string(),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}
