//! Row-major embedding matrices and their on-disk format.
//!
//! Binary layout: magic `EMB1`, little-endian `u32` row count, `u32`
//! dimension, then `rows * dim` little-endian `f32` values. Ids live in a
//! sidecar UTF-8 file, one per line, in row order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            let row = pos / dim.max(1);
            return Err(Error::NonFinite(format!("embedding row {row} ({})", ids[row])));
        }
        Ok(Self { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.ids.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "embedding file",
            message,
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing EMB1 header".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + rows * dim * 4;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        if ids.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: ids.len(),
            });
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(ids, dim, data)
    }

    pub fn ids_text(&self) -> String {
        let mut s = self.ids.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }

    pub fn load(path: impl AsRef<Path>, ids_path: impl AsRef<Path>) -> Result<Self> {
        let (path, ids_path) = (path.as_ref(), ids_path.as_ref());
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ids_text = fs::read_to_string(ids_path).map_err(|e| Error::io(ids_path, e))?;
        let ids = ids_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_bytes(&bytes, ids)
    }

    pub fn save(&self, path: impl AsRef<Path>, ids_path: impl AsRef<Path>) -> Result<()> {
        let (path, ids_path) = (path.as_ref(), ids_path.as_ref());
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        fs::write(ids_path, self.ids_text()).map_err(|e| Error::io(ids_path, e))
    }
}

/// Conventional sidecar path: `<file>.ids`.
pub fn ids_path_for(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    s.into()
}

pub fn l2_normalized(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| x as f64 / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
