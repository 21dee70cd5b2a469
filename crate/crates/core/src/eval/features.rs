//! Feature-vector files for the Fréchet distance.
//!
//! Binary layout: `u32` row count, `u32` dimension, then `rows * dim` `f32`
//! values, all little-endian, row-major. `.json` files hold an array of
//! arrays; `.jsonl` files hold one array per line.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature file: {0}")]
    Io(#[from] io::Error),
    #[error("malformed feature data: {0}")]
    Format(String),
}

/// Row-major set of equal-length feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    values: Vec<f64>,
}

impl FeatureSet {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::Format("dimension must be >= 1".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(FeatureError::Format(format!(
                "{} values do not divide into rows of {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, FeatureError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(FeatureError::Format(format!("row {i} has {} values, expected {dim}", r.len())));
        }
        Self::new(dim, rows.into_iter().flatten().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }
}

fn read_u32(buf: &[u8], at: usize) -> Result<u32, FeatureError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| FeatureError::Format("truncated header".into()))
}

pub fn decode_binary(buf: &[u8]) -> Result<FeatureSet, FeatureError> {
    let rows = read_u32(buf, 0)? as usize;
    let dim = read_u32(buf, 4)? as usize;
    let body = &buf[8..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FeatureError::Format("header overflows".into()))?;
    if body.len() != expected {
        return Err(FeatureError::Format(format!(
            "header says {rows}x{dim} floats ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    FeatureSet::new(dim, values)
}

pub fn encode_binary(set: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.values.len() * 4);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_binary(path: &Path, set: &FeatureSet) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_binary(set))
}

/// Reads by extension: `.json`, `.jsonl`, anything else binary.
pub fn read_features(path: &Path) -> Result<FeatureSet, FeatureError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => {
            let rows: Vec<Vec<f64>> = serde_json::from_slice(&fs::read(path)?)
                .map_err(|e| FeatureError::Format(e.to_string()))?;
            FeatureSet::from_rows(rows)
        }
        "jsonl" => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: Vec<f64> = serde_json::from_str(&line)
                    .map_err(|e| FeatureError::Format(format!("line {}: {e}", i + 1)))?;
                rows.push(row);
            }
            FeatureSet::from_rows(rows)
        }
        _ => decode_binary(&fs::read(path)?),
    }
}
