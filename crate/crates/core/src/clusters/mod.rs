//! Identity regions: Ward clustering of unit-normalized embeddings,
//! per-region prompt summaries, nearest-centroid assignment and the
//! attribute-entropy diagnostic.
//!
//! Model files use the `CLM1` layout (little-endian): magic, `u32` N,
//! `u32` dim, `u32` n_clusters, source hash (`u16` length + UTF-8), N ids,
//! N−1 merges `(u32 left, u32 right, f64 height, u32 size)`, N `u32`
//! labels, then `n_clusters * dim` centroid `f32`.

mod ward;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, ByteReader};
use crate::corpus::{Corpus, PromptKind};
use crate::embedding::EmbeddingMatrix;
use crate::metrics::entropy_from_counts;
use crate::vocab::UNSPECIFIED;

pub use ward::{cut, ward_linkage, Merge};

const MAGIC: &[u8; 4] = b"CLM1";

pub const DEFAULT_CLUSTERS: usize = 24;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("n_clusters = {n_clusters} outside [2, {n}]")]
    ClusterCount { n_clusters: usize, n: usize },
    #[error("non-finite value in embedding row {0}")]
    NonFinite(String),
    #[error("zero-norm embedding row {0}")]
    ZeroRow(String),
    #[error("cluster {0} has a zero-norm mean direction")]
    DegenerateCentroid(usize),
    #[error("embedding dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("image {0:?} is not in the corpus")]
    UnknownImage(String),
    #[error("image {0:?} is not an identity prompt")]
    NotIdentity(String),
    #[error("unknown attribute {0:?}; expected gender, ethnicity or joint")]
    UnknownAttribute(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Ward model fitted on the identity embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub n_clusters: usize,
    pub dim: usize,
    /// Row order of the fitted embeddings.
    pub ids: Vec<String>,
    pub merges: Vec<Merge>,
    /// Cluster of each row in `ids`.
    pub labels: Vec<u32>,
    /// Row-major `n_clusters * dim`, unit norm.
    pub centroids: Vec<f32>,
    pub source_hash: String,
}

fn normalized_f64(row: &[f32]) -> Option<Vec<f64>> {
    let v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

/// Ward clustering of the L2-normalized rows, cut at `n_clusters`.
pub fn ward_cluster(embeddings: &EmbeddingMatrix, n_clusters: usize) -> Result<ClusterModel, ClusterError> {
    let n = embeddings.len();
    if n_clusters < 2 || n_clusters > n {
        return Err(ClusterError::ClusterCount { n_clusters, n });
    }
    let dim = embeddings.dim();
    let mut rows = Vec::with_capacity(n * dim);
    for (id, row) in embeddings.rows() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(id.to_owned()));
        }
        rows.extend(normalized_f64(row).ok_or_else(|| ClusterError::ZeroRow(id.to_owned()))?);
    }
    let merges = ward_linkage(&rows, n, dim);
    let labels = cut(&merges, n, n_clusters);
    let centroids = centroids(&rows, dim, &labels, n_clusters)?;
    Ok(ClusterModel {
        n_clusters,
        dim,
        ids: embeddings.ids().to_vec(),
        merges,
        labels,
        centroids,
        source_hash: binio::sha256_hex(&embeddings.to_bytes()),
    })
}

fn centroids(rows: &[f64], dim: usize, labels: &[u32], k: usize) -> Result<Vec<f32>, ClusterError> {
    let mut sums = vec![0f64; k * dim];
    for (row, &l) in rows.chunks_exact(dim).zip(labels) {
        for (s, x) in sums[l as usize * dim..(l as usize + 1) * dim].iter_mut().zip(row) {
            *s += x;
        }
    }
    let mut out = Vec::with_capacity(k * dim);
    for (j, c) in sums.chunks_exact(dim).enumerate() {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(ClusterError::DegenerateCentroid(j));
        }
        out.extend(c.iter().map(|x| (x / norm) as f32));
    }
    Ok(out)
}

impl ClusterModel {
    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// `(image_id, cluster)` for the fitted rows.
    pub fn assignments(&self) -> Vec<(String, u32)> {
        self.ids.iter().cloned().zip(self.labels.iter().copied()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let w = &mut buf;
        binio::write_u32(w, self.ids.len() as u32).unwrap();
        binio::write_u32(w, self.dim as u32).unwrap();
        binio::write_u32(w, self.n_clusters as u32).unwrap();
        binio::write_short_str(w, &self.source_hash).unwrap();
        for id in &self.ids {
            binio::write_short_str(w, id).expect("ids fit the u16 length prefix");
        }
        for m in &self.merges {
            binio::write_u32(w, m.left).unwrap();
            binio::write_u32(w, m.right).unwrap();
            binio::write_f64(w, m.height).unwrap();
            binio::write_u32(w, m.size).unwrap();
        }
        for &l in &self.labels {
            binio::write_u32(w, l).unwrap();
        }
        for &c in &self.centroids {
            binio::write_f32(w, c).unwrap();
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClusterError> {
        let fmt = |e: std::io::Error| ClusterError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC).map_err(fmt)?;
        let n = r.u32().map_err(fmt)? as usize;
        let dim = r.u32().map_err(fmt)? as usize;
        let n_clusters = r.u32().map_err(fmt)? as usize;
        let source_hash = r.short_str().map_err(fmt)?;
        if n_clusters == 0 || n_clusters > n || dim == 0 {
            return Err(ClusterError::Format(format!("bad header: n={n} dim={dim} clusters={n_clusters}")));
        }
        let ids = (0..n).map(|_| r.short_str()).collect::<Result<Vec<_>, _>>().map_err(fmt)?;
        let mut merges = Vec::with_capacity(n - 1);
        for _ in 0..n - 1 {
            let left = r.u32().map_err(fmt)?;
            let right = r.u32().map_err(fmt)?;
            let height = r.f64().map_err(fmt)?;
            let size = r.u32().map_err(fmt)?;
            merges.push(Merge { left, right, height, size });
        }
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>().map_err(fmt)?;
        if labels.iter().any(|&l| l as usize >= n_clusters) {
            return Err(ClusterError::Format("label out of range".into()));
        }
        let centroids = (0..n_clusters * dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>().map_err(fmt)?;
        r.finish().map_err(fmt)?;
        Ok(ClusterModel { n_clusters, dim, ids, merges, labels, centroids, source_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClusterError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| ClusterError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClusterError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ClusterError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Nearest unit centroid by dot product for every row; ties go to the
/// lower cluster index. Rows are normalized first.
pub fn assign(model: &ClusterModel, embeddings: &EmbeddingMatrix) -> Result<Vec<(String, u32)>, ClusterError> {
    if embeddings.dim() != model.dim {
        return Err(ClusterError::DimensionMismatch { expected: model.dim, got: embeddings.dim() });
    }
    let rows: Vec<(&str, &[f32])> = embeddings.rows().collect();
    rows.par_iter()
        .map(|&(id, row)| {
            let v = normalized_f64(row).ok_or_else(|| ClusterError::ZeroRow(id.to_owned()))?;
            let mut best = (0u32, f64::NEG_INFINITY);
            for j in 0..model.n_clusters {
                let dot: f64 = v.iter().zip(model.centroid(j)).map(|(a, &b)| a * f64::from(b)).sum();
                if dot > best.1 {
                    best = (j as u32, dot);
                }
            }
            Ok((id.to_owned(), best.0))
        })
        .collect()
}

/// Fraction of `labels` in each of `n_clusters` clusters; all zero when
/// `labels` is empty.
pub fn cluster_shares(labels: &[u32], n_clusters: usize) -> Result<Vec<f64>, ClusterError> {
    let mut counts = vec![0usize; n_clusters];
    for &l in labels {
        *counts
            .get_mut(l as usize)
            .ok_or_else(|| ClusterError::Format(format!("assignment to cluster {l} of {n_clusters}")))? += 1;
    }
    let n = labels.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Ranked `(phrase, percent)`.
pub type PhraseShare = (String, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub cluster: u32,
    /// Identity images in the region.
    pub members: usize,
    /// Fraction of the evaluated dataset assigned here.
    pub share: f64,
    pub top_gender: Vec<PhraseShare>,
    pub top_ethnicity: Vec<PhraseShare>,
}

fn identity_phrases(corpus: &Corpus, id: &str) -> Result<(String, String), ClusterError> {
    let record = corpus.get(id).ok_or_else(|| ClusterError::UnknownImage(id.to_owned()))?;
    if record.prompt.kind() != PromptKind::Identity {
        return Err(ClusterError::NotIdentity(id.to_owned()));
    }
    let gender = record.prompt.gender().map_or(UNSPECIFIED, |g| g.phrase()).to_owned();
    let ethnicity = record.prompt.ethnicity_phrase().unwrap_or(UNSPECIFIED).to_owned();
    Ok((gender, ethnicity))
}

fn ranked(counts: BTreeMap<String, usize>, total: usize) -> Vec<PhraseShare> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic, so a stable sort keeps it for ties
    v.sort_by(|a, b| b.1.cmp(&a.1));
    v.into_iter().map(|(p, c)| (p, 100.0 * c as f64 / total as f64)).collect()
}

/// Region profiles from the identity members of each cluster, with each
/// region's share of `eval_assignments`.
pub fn summarize_regions(
    model: &ClusterModel,
    identity_corpus: &Corpus,
    eval_assignments: &[(String, u32)],
) -> Result<Vec<RegionSummary>, ClusterError> {
    let k = model.n_clusters;
    let mut genders = vec![BTreeMap::<String, usize>::new(); k];
    let mut ethnicities = vec![BTreeMap::<String, usize>::new(); k];
    let mut members = vec![0usize; k];
    for (id, &l) in model.ids.iter().zip(&model.labels) {
        let (g, e) = identity_phrases(identity_corpus, id)?;
        *genders[l as usize].entry(g).or_default() += 1;
        *ethnicities[l as usize].entry(e).or_default() += 1;
        members[l as usize] += 1;
    }
    let mut eval = vec![0usize; k];
    for (_, l) in eval_assignments {
        if *l as usize >= k {
            return Err(ClusterError::Format(format!("assignment to cluster {l} of {k}")));
        }
        eval[*l as usize] += 1;
    }
    let total = eval_assignments.len();
    Ok((0..k)
        .map(|j| RegionSummary {
            cluster: j as u32,
            members: members[j],
            share: if total == 0 { 0.0 } else { eval[j] as f64 / total as f64 },
            top_gender: ranked(std::mem::take(&mut genders[j]), members[j]),
            top_ethnicity: ranked(std::mem::take(&mut ethnicities[j]), members[j]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Ethnicity,
    Joint,
}

impl std::str::FromStr for Attribute {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gender" => Ok(Attribute::Gender),
            "ethnicity" => Ok(Attribute::Ethnicity),
            "joint" => Ok(Attribute::Joint),
            other => Err(ClusterError::UnknownAttribute(other.to_owned())),
        }
    }
}

/// Size-weighted mean over clusters of the base-2 entropy of the
/// attribute's prompt phrases among cluster members.
pub fn attribute_entropy(model: &ClusterModel, identity_corpus: &Corpus, attribute: Attribute) -> Result<f64, ClusterError> {
    let mut per_cluster: Vec<HashMap<String, usize>> = vec![HashMap::new(); model.n_clusters];
    for (id, &l) in model.ids.iter().zip(&model.labels) {
        let (g, e) = identity_phrases(identity_corpus, id)?;
        let key = match attribute {
            Attribute::Gender => g,
            Attribute::Ethnicity => e,
            Attribute::Joint => format!("{e}|{g}"),
        };
        *per_cluster[l as usize].entry(key).or_default() += 1;
    }
    let mut weighted = 0.0;
    let mut total = 0usize;
    for counts in &per_cluster {
        let c: Vec<usize> = counts.values().copied().collect();
        let size: usize = c.iter().sum();
        if size > 0 {
            weighted += size as f64 * entropy_from_counts(&c);
            total += size;
        }
    }
    Ok(weighted / total as f64)
}
