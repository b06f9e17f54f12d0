//! Dense per-image embeddings and the `EMB1` file format.
//!
//! Layout (little-endian): magic `EMB1`, `u32` count, `u32` dim, `count`
//! ids as `u16` length + UTF-8, then `count * dim` `f32` row-major.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio::{self, ByteReader};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{ids} ids but {rows} rows of dim {dim}")]
    Shape { ids: usize, rows: usize, dim: usize },
    #[error("non-finite value in row {row} ({id})")]
    NonFinite { row: usize, id: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("degenerate embedding for {0}: zero norm")]
    Degenerate(String),
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if data.len() != ids.len() * dim {
            return Err(EmbeddingError::Shape { ids: ids.len(), rows: data.len() / dim, dim });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        for (row, chunk) in data.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row, id: ids[row].clone() });
            }
        }
        Ok(EmbeddingMatrix { ids, dim, data })
    }

    pub fn from_rows(rows: Vec<(String, Vec<f32>)>) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, |(_, r)| r.len());
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in rows {
            if row.len() != dim {
                return Err(EmbeddingError::Format(format!(
                    "row {id} has dim {}, expected {dim}",
                    row.len()
                )));
            }
            ids.push(id);
            data.extend(row);
        }
        Self::new(ids, dim, data)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows scaled to unit L2 norm; zero rows are an error.
    pub fn normalized(&self) -> Result<EmbeddingMatrix, EmbeddingError> {
        let mut data = Vec::with_capacity(self.data.len());
        for (id, row) in self.rows() {
            data.extend(normalize_row(row).ok_or_else(|| EmbeddingError::Degenerate(id.to_owned()))?);
        }
        Ok(EmbeddingMatrix { ids: self.ids.clone(), dim: self.dim, data })
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, ids: &[&str]) -> Option<EmbeddingMatrix> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            data.extend_from_slice(self.row(*index.get(id)?));
        }
        Some(EmbeddingMatrix { ids: ids.iter().map(|s| (*s).to_owned()).collect(), dim: self.dim, data })
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u32(&mut w, self.ids.len() as u32)?;
        binio::write_u32(&mut w, self.dim as u32)?;
        for id in &self.ids {
            binio::write_short_str(&mut w, id)?;
        }
        for v in &self.data {
            binio::write_f32(&mut w, *v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 4 + self.ids.len() * 16);
        self.write(&mut buf).expect("in-memory write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let fmt = |e: io::Error| EmbeddingError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC).map_err(fmt)?;
        let count = r.u32().map_err(fmt)? as usize;
        let dim = r.u32().map_err(fmt)? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            ids.push(r.short_str().map_err(fmt)?);
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| EmbeddingError::Format("size overflow".into()))?;
        if r.remaining() < expected {
            return Err(EmbeddingError::Format(format!(
                "truncated payload: {count}x{dim} floats need {expected} bytes, {} present",
                r.remaining()
            )));
        }
        let data = r
            .take(expected)
            .map_err(fmt)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        r.finish().map_err(fmt)?;
        Self::new(ids, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Unit-norm copy of `row`, accumulated in `f64`. `None` for zero or
/// non-finite input.
pub fn normalize_row(row: &[f32]) -> Option<Vec<f32>> {
    let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(row.iter().map(|&v| (f64::from(v) / norm) as f32).collect())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    EmbeddingMatrix::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(vec![
            ("a".into(), vec![3.0, 4.0, 0.0]),
            ("b".into(), vec![0.0, -1.5, 2.0]),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = sample();
        let bytes = m.to_bytes();
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&3u32.to_le_bytes());
        for id in ["x", "y"] {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for i in 0..5 {
            buf.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let err = EmbeddingMatrix::from_bytes(&buf).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_and_nan() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(EmbeddingMatrix::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));

        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(EmbeddingError::NonFinite { row: 1, .. })));
    }

    #[test]
    fn normalization() {
        let m = sample().normalized().unwrap();
        assert_eq!(m.row(0), &[0.6, 0.8, 0.0]);
        let zero = EmbeddingMatrix::from_rows(vec![("z".into(), vec![0.0, 0.0])]).unwrap();
        assert!(matches!(zero.normalized(), Err(EmbeddingError::Degenerate(id)) if id == "z"));
    }
}
