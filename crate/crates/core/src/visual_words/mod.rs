//! Bag-of-visual-words: a k-means codebook over SIFT descriptors and
//! TF-IDF weighted sparse vectors per image.
//!
//! Codebook files use the `CBK1` layout: magic, `u32` k, `u32` dim,
//! `u64` seed, `k * dim` centroid `f32`, then `k` idf `f32`.

mod kmeans;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, ByteReader};
use crate::pixel::{DescriptorSet, DESCRIPTOR_LEN};

pub use kmeans::{kmeans, KMeansFit};

const MAGIC: &[u8; 4] = b"CBK1";

pub const DEFAULT_K: usize = 1024;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum VisualWordsError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("{have} descriptors cannot train {k} visual words")]
    TooFewDescriptors { have: usize, k: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("idf has {got} entries, codebook has {k} words")]
    IdfLength { got: usize, k: usize },
    #[error("codebook file: {0}")]
    Format(String),
    #[error("vectors file line {line}: {message}")]
    VectorLine { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row-major `k * dim`.
    pub centroids: Vec<f32>,
    /// Training inertia; absent when the codebook was read from disk.
    pub inertia: Option<f64>,
    /// Per-word idf; empty until [`Codebook::with_idf`] is called.
    pub idf: Vec<f32>,
}

impl Codebook {
    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn with_idf(mut self, idf: &[f64]) -> Result<Self, VisualWordsError> {
        if idf.len() != self.k {
            return Err(VisualWordsError::IdfLength { got: idf.len(), k: self.k });
        }
        self.idf = idf.iter().map(|&v| v as f32).collect();
        Ok(self)
    }

    pub fn idf_f64(&self) -> Vec<f64> {
        self.idf.iter().map(|&v| f64::from(v)).collect()
    }

    /// Nearest word by Euclidean distance; ties go to the lower index.
    pub fn quantize(&self, descriptor: &[f32]) -> u32 {
        let mut best = (0usize, f64::INFINITY);
        for j in 0..self.k {
            let d: f64 = descriptor
                .iter()
                .zip(self.centroid(j))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0 as u32
    }

    /// Word counts for one image, sorted by word.
    pub fn term_counts(&self, descriptors: &[[f32; DESCRIPTOR_LEN]]) -> Vec<(u32, u32)> {
        let mut counts = std::collections::BTreeMap::new();
        for d in descriptors {
            *counts.entry(self.quantize(d)).or_insert(0u32) += 1;
        }
        counts.into_iter().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 4 * (self.centroids.len() + self.k));
        buf.extend_from_slice(MAGIC);
        let w = &mut buf;
        binio::write_u32(w, self.k as u32).unwrap();
        binio::write_u32(w, self.dim as u32).unwrap();
        binio::write_u64(w, self.seed).unwrap();
        for &v in &self.centroids {
            binio::write_f32(w, v).unwrap();
        }
        let idf = if self.idf.is_empty() { vec![1.0; self.k] } else { self.idf.clone() };
        for v in idf {
            binio::write_f32(w, v).unwrap();
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VisualWordsError> {
        let fmt = |e: std::io::Error| VisualWordsError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC).map_err(fmt)?;
        let k = r.u32().map_err(fmt)? as usize;
        let dim = r.u32().map_err(fmt)? as usize;
        let seed = r.u64().map_err(fmt)?;
        if k < 2 {
            return Err(VisualWordsError::KTooSmall(k));
        }
        let expected = (k * dim + k) * 4;
        if r.remaining() != expected {
            return Err(VisualWordsError::Format(format!(
                "k={k} dim={dim} needs {expected} payload bytes, found {}",
                r.remaining()
            )));
        }
        let mut floats = |n: usize| -> Result<Vec<f32>, VisualWordsError> {
            let v: Vec<f32> = (0..n).map(|_| r.f32()).collect::<Result<_, _>>().map_err(fmt)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(VisualWordsError::Format("non-finite value".into()));
            }
            Ok(v)
        };
        let centroids = floats(k * dim)?;
        let idf = floats(k)?;
        Ok(Codebook { k, dim, seed, centroids, inertia: None, idf })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VisualWordsError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| VisualWordsError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VisualWordsError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| VisualWordsError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Trains a shared codebook over every descriptor of every set.
pub fn train_codebook(
    sets: &[DescriptorSet],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(Codebook, KMeansFit), VisualWordsError> {
    if k < 2 {
        return Err(VisualWordsError::KTooSmall(k));
    }
    let total: usize = sets.iter().map(DescriptorSet::len).sum();
    if total < k {
        return Err(VisualWordsError::TooFewDescriptors { have: total, k });
    }
    let mut points = Vec::with_capacity(total * DESCRIPTOR_LEN);
    for s in sets {
        for d in &s.descriptors {
            points.extend_from_slice(d);
        }
    }
    let fit = kmeans(&points, DESCRIPTOR_LEN, k, seed, max_iter);
    let codebook = Codebook {
        k,
        dim: DESCRIPTOR_LEN,
        seed,
        centroids: fit.centroids.iter().map(|&v| v as f32).collect(),
        inertia: Some(fit.inertia()),
        idf: Vec::new(),
    };
    Ok((codebook, fit))
}

/// Smooth idf: `ln((1 + N) / (1 + df)) + 1` with `df` the number of images
/// in which the word occurs.
pub fn compute_idf(term_counts: &[Vec<(u32, u32)>], k: usize) -> Vec<f64> {
    let mut df = vec![0usize; k];
    for counts in term_counts {
        for &(w, c) in counts {
            if c > 0 {
                df[w as usize] += 1;
            }
        }
    }
    let n = term_counts.len() as f64;
    df.into_iter().map(|d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect()
}

/// L2-normalized sparse vector over `dim` visual words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: u32,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: u32) -> Self {
        SparseVector { dim, indices: Vec::new(), values: Vec::new() }
    }

    /// Builds a normalized vector from unsorted `(index, weight)` pairs;
    /// zero weights are dropped and repeated indices summed.
    pub fn from_weights(dim: u32, pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for (i, w) in pairs {
            assert!(i < dim, "index {i} out of range for dim {dim}");
            *map.entry(i).or_insert(0.0) += w;
        }
        map.retain(|_, w| *w != 0.0);
        let norm = map.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self::empty(dim);
        }
        let (indices, values) = map.into_iter().map(|(i, w)| (i, w / norm)).unzip();
        SparseVector { dim, indices, values }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim as usize];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i as usize] = v;
        }
        d
    }

    /// Sparse dot product by merging the two sorted index lists.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Cosine similarity of two normalized vectors, in `[0, 1]`. An empty
/// vector has similarity 0 with everything.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> Result<f64, VisualWordsError> {
    if a.dim != b.dim {
        return Err(VisualWordsError::DimensionMismatch { left: a.dim as usize, right: b.dim as usize });
    }
    Ok(a.dot(b).clamp(0.0, 1.0))
}

/// Raw term frequency times idf, L2-normalized.
pub fn vectorize(
    descriptors: &[[f32; DESCRIPTOR_LEN]],
    codebook: &Codebook,
    idf: &[f64],
) -> Result<SparseVector, VisualWordsError> {
    if idf.len() != codebook.k {
        return Err(VisualWordsError::IdfLength { got: idf.len(), k: codebook.k });
    }
    Ok(weight(&codebook.term_counts(descriptors), codebook.k, idf))
}

fn weight(counts: &[(u32, u32)], k: usize, idf: &[f64]) -> SparseVector {
    SparseVector::from_weights(k as u32, counts.iter().map(|&(w, c)| (w, f64::from(c) * idf[w as usize])))
}

/// Term counts for many images in parallel, in input order.
pub fn term_counts_all(sets: &[DescriptorSet], codebook: &Codebook) -> Vec<Vec<(u32, u32)>> {
    sets.par_iter().map(|s| codebook.term_counts(&s.descriptors)).collect()
}

/// Vectorizes every set against the codebook's stored idf.
pub fn vectorize_all(sets: &[DescriptorSet], codebook: &Codebook) -> Result<Vec<SparseVector>, VisualWordsError> {
    let idf = codebook.idf_f64();
    if idf.len() != codebook.k {
        return Err(VisualWordsError::IdfLength { got: idf.len(), k: codebook.k });
    }
    Ok(term_counts_all(sets, codebook).iter().map(|c| weight(c, codebook.k, &idf)).collect())
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    id: String,
    dim: u32,
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Writes one `{id, dim, indices, values}` object per line.
pub fn write_vectors<W: Write>(mut w: W, vectors: &[(String, SparseVector)]) -> std::io::Result<()> {
    for (id, v) in vectors {
        let line = VectorLine { id: id.clone(), dim: v.dim, indices: v.indices.clone(), values: v.values.clone() };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_vectors<R: BufRead>(reader: R) -> Result<Vec<(String, SparseVector)>, VisualWordsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let bad = |message: String| VisualWordsError::VectorLine { line: i + 1, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VectorLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if v.indices.len() != v.values.len() {
            return Err(bad("indices and values differ in length".into()));
        }
        if v.indices.windows(2).any(|w| w[0] >= w[1]) || v.indices.last().is_some_and(|&i| i >= v.dim) {
            return Err(bad("indices must be sorted, unique and below dim".into()));
        }
        if v.values.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(bad("values must be positive and finite".into()));
        }
        out.push((v.id, SparseVector { dim: v.dim, indices: v.indices, values: v.values }));
    }
    Ok(out)
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<Vec<(String, SparseVector)>, VisualWordsError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| VisualWordsError::Io { path: path.into(), source })?;
    parse_vectors(BufReader::new(file))
}

pub fn save_vectors(path: impl AsRef<Path>, vectors: &[(String, SparseVector)]) -> Result<(), VisualWordsError> {
    let path = path.as_ref();
    let io = |source| VisualWordsError::Io { path: path.into(), source };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    write_vectors(&mut f, vectors).map_err(io)?;
    f.flush().map_err(io)
}
