//! Approximate k-NN graph over bag-of-visual-words vectors, plus exact and
//! colorfulness neighbor lookups.
//!
//! Index files use the `KNN1` layout: magic, `u32` N, `u32` K, `u64` seed,
//! N ids (`u16` length + UTF-8), then N×K `(u32 node, f32 similarity)`.

mod build;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio::{self, ByteReader};
use crate::visual_words::SparseVector;

pub use build::{build_index, BuildParams};

const MAGIC: &[u8; 4] = b"KNN1";

/// Random entry points for probes that are not in the graph.
pub const ENTRY_POINTS: usize = 8;
/// Default candidate pool width for graph search.
pub const DEFAULT_EF: usize = 64;

const ENTRY_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("{have} vectors cannot give every node {k} neighbors")]
    TooFewVectors { have: usize, k: usize },
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("k = {k} exceeds the {max} available neighbors")]
    KTooLarge { k: usize, max: usize },
    #[error("{0}")]
    InvalidParameter(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("index file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Fixed-degree neighbor graph; each list is sorted by descending
/// similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    ids: Vec<String>,
    k: usize,
    build_seed: u64,
    neighbors: Vec<Vec<(u32, f32)>>,
    index: HashMap<String, u32>,
}

impl KnnGraph {
    pub fn new(ids: Vec<String>, k: usize, build_seed: u64, neighbors: Vec<Vec<(u32, f32)>>) -> Result<Self, AnnError> {
        let n = ids.len();
        if neighbors.len() != n {
            return Err(AnnError::InvalidGraph(format!("{n} ids but {} neighbor lists", neighbors.len())));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(AnnError::InvalidGraph(format!("duplicate id {id:?}")));
            }
        }
        for (v, list) in neighbors.iter().enumerate() {
            if list.len() != k {
                return Err(AnnError::InvalidGraph(format!("node {v} has {} neighbors, expected {k}", list.len())));
            }
            let mut seen = HashSet::with_capacity(k);
            for (pos, &(u, s)) in list.iter().enumerate() {
                if u as usize >= n || u as usize == v || !seen.insert(u) {
                    return Err(AnnError::InvalidGraph(format!("node {v} has a bad edge to {u}")));
                }
                if !(0.0..=1.0).contains(&s) {
                    return Err(AnnError::InvalidGraph(format!("node {v} similarity {s} outside [0, 1]")));
                }
                if pos > 0 && list[pos - 1].1 < s {
                    return Err(AnnError::InvalidGraph(format!("node {v} neighbors are not sorted")));
                }
            }
        }
        Ok(KnnGraph { ids, k, build_seed, neighbors, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn build_seed(&self) -> u64 {
        self.build_seed
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| i as usize)
    }

    pub fn neighbors(&self, node: usize) -> &[(u32, f32)] {
        &self.neighbors[node]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let w = &mut buf;
        binio::write_u32(w, self.ids.len() as u32).unwrap();
        binio::write_u32(w, self.k as u32).unwrap();
        binio::write_u64(w, self.build_seed).unwrap();
        for id in &self.ids {
            binio::write_short_str(w, id).expect("ids fit the u16 length prefix");
        }
        for list in &self.neighbors {
            for &(u, s) in list {
                binio::write_u32(w, u).unwrap();
                binio::write_f32(w, s).unwrap();
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnnError> {
        let fmt = |e: std::io::Error| AnnError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC).map_err(fmt)?;
        let n = r.u32().map_err(fmt)? as usize;
        let k = r.u32().map_err(fmt)? as usize;
        let seed = r.u64().map_err(fmt)?;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            ids.push(r.short_str().map_err(fmt)?);
        }
        if r.remaining() != n * k * 8 {
            return Err(AnnError::Format(format!("{n}x{k} edges need {} bytes, found {}", n * k * 8, r.remaining())));
        }
        let mut neighbors = Vec::with_capacity(n);
        for _ in 0..n {
            let mut list = Vec::with_capacity(k);
            for _ in 0..k {
                list.push((r.u32().map_err(fmt)?, r.f32().map_err(fmt)?));
            }
            neighbors.push(list);
        }
        Self::new(ids, k, seed, neighbors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnnError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| AnnError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnnError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| AnnError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Orders `vectors` to match the graph's node order. Every node needs a
/// vector; extra vectors are an error too.
pub fn align_vectors(graph: &KnnGraph, vectors: Vec<(String, SparseVector)>) -> Result<Vec<SparseVector>, AnnError> {
    if vectors.len() != graph.len() {
        return Err(AnnError::InvalidParameter(format!("{} vectors for a graph of {}", vectors.len(), graph.len())));
    }
    let mut slots: Vec<Option<SparseVector>> = vec![None; graph.len()];
    for (id, v) in vectors {
        let i = graph.position(&id).ok_or(AnnError::UnknownId(id))?;
        slots[i] = Some(v);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| AnnError::InvalidParameter(format!("no vector for {:?}", graph.ids()[i]))))
        .collect()
}

/// What to search around.
#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Id(&'a str),
    Vector(&'a SparseVector),
}

/// Orders `(similarity, id)` pairs best first: similarity descending, then
/// id ascending.
fn rank(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Greedy best-first search over the graph with the default pool width.
pub fn query(graph: &KnnGraph, vectors: &[SparseVector], probe: Probe<'_>, k: usize) -> Result<Vec<(String, f64)>, AnnError> {
    query_with(graph, vectors, probe, k, DEFAULT_EF)
}

/// Like [`query`] with an explicit candidate pool width `ef` (at least `k`).
pub fn query_with(
    graph: &KnnGraph,
    vectors: &[SparseVector],
    probe: Probe<'_>,
    k: usize,
    ef: usize,
) -> Result<Vec<(String, f64)>, AnnError> {
    let n = graph.len();
    if vectors.len() != n {
        return Err(AnnError::InvalidParameter(format!("{} vectors for a graph of {n}", vectors.len())));
    }
    let (target, exclude, starts): (&SparseVector, Option<u32>, Vec<u32>) = match probe {
        Probe::Id(id) => {
            let p = graph.position(id).ok_or_else(|| AnnError::UnknownId(id.to_owned()))?;
            if k > n - 1 {
                return Err(AnnError::KTooLarge { k, max: n - 1 });
            }
            let starts = graph.neighbors(p).iter().map(|&(u, _)| u).collect();
            (&vectors[p], Some(p as u32), starts)
        }
        Probe::Vector(v) => {
            if k > n {
                return Err(AnnError::KTooLarge { k, max: n });
            }
            if vectors.first().is_some_and(|f| f.dim != v.dim) {
                return Err(AnnError::InvalidParameter(format!(
                    "probe dimension {} differs from index dimension {}",
                    v.dim, vectors[0].dim
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(graph.build_seed() ^ ENTRY_SEED_SALT);
            let starts = index::sample(&mut rng, n, ENTRY_POINTS.min(n)).into_iter().map(|i| i as u32).collect();
            (v, None, starts)
        }
    };
    let ef = ef.max(k);
    let sim = |u: u32| target.dot(&vectors[u as usize]).clamp(0.0, 1.0);
    let before = |a: (f64, u32), b: (f64, u32)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);

    let mut visited: HashSet<u32> = HashSet::new();
    if let Some(p) = exclude {
        visited.insert(p);
    }
    // pool entries: (similarity, node, expanded)
    let mut pool: Vec<(f64, u32, bool)> = Vec::with_capacity(ef + 1);
    let offer = |pool: &mut Vec<(f64, u32, bool)>, u: u32, s: f64| {
        if pool.len() == ef {
            let w = pool[ef - 1];
            if !before((s, u), (w.0, w.1)) {
                return;
            }
            pool.pop();
        }
        let pos = pool.iter().position(|e| before((s, u), (e.0, e.1))).unwrap_or(pool.len());
        pool.insert(pos, (s, u, false));
    };
    for u in starts {
        if visited.insert(u) {
            offer(&mut pool, u, sim(u));
        }
    }
    while let Some(i) = pool.iter().position(|e| !e.2) {
        pool[i].2 = true;
        let node = pool[i].1;
        for &(u, _) in graph.neighbors(node as usize) {
            if visited.insert(u) {
                offer(&mut pool, u, sim(u));
            }
        }
    }
    let mut out: Vec<(String, f64)> = pool.into_iter().map(|(s, u, _)| (graph.ids()[u as usize].clone(), s)).collect();
    out.sort_by(rank);
    out.truncate(k);
    Ok(out)
}

/// Exact top-k by cosine, ties broken by id. An indexed probe is excluded
/// from its own results.
pub fn brute_force_knn(
    ids: &[String],
    vectors: &[SparseVector],
    probe: Probe<'_>,
    k: usize,
) -> Result<Vec<(String, f64)>, AnnError> {
    let (target, exclude) = match probe {
        Probe::Id(id) => {
            let p = ids.iter().position(|x| x == id).ok_or_else(|| AnnError::UnknownId(id.to_owned()))?;
            (&vectors[p], Some(p))
        }
        Probe::Vector(v) => (v, None),
    };
    let max = ids.len() - usize::from(exclude.is_some());
    if k > max {
        return Err(AnnError::KTooLarge { k, max });
    }
    let mut all: Vec<(String, f64)> = ids
        .iter()
        .zip(vectors)
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, (id, v))| (id.clone(), target.dot(v).clamp(0.0, 1.0)))
        .collect();
    all.sort_by(rank);
    all.truncate(k);
    Ok(all)
}

/// The `k` images whose colorfulness is closest to the probe's, ties by id.
pub fn colorfulness_neighbors(scores: &[(String, f64)], probe_id: &str, k: usize) -> Result<Vec<(String, f64)>, AnnError> {
    let probe = scores
        .iter()
        .find(|(id, _)| id == probe_id)
        .map(|&(_, s)| s)
        .ok_or_else(|| AnnError::UnknownId(probe_id.to_owned()))?;
    let mut rest: Vec<(&str, f64, f64)> = scores
        .iter()
        .filter(|(id, _)| id != probe_id)
        .map(|(id, s)| (id.as_str(), (s - probe).abs(), *s))
        .collect();
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(rest.into_iter().take(k).map(|(id, _, s)| (id.to_owned(), s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_weights(4, pairs.iter().copied())
    }

    #[test]
    fn brute_force_hand_checked() {
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let vs = vec![v(&[(0, 1.0)]), v(&[(0, 1.0), (1, 1.0)]), v(&[(1, 1.0)])];
        let probe = v(&[(0, 3.0), (1, 1.0)]);
        let got = brute_force_knn(&ids, &vs, Probe::Vector(&probe), 3).unwrap();
        let names: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
        // cos(a) = 3/sqrt(10), cos(b) = 4/sqrt(20), cos(c) = 1/sqrt(10)
        assert_eq!(names, ["a", "b", "c"]);
        assert!((got[0].1 - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        assert!((got[1].1 - 4.0 / 20f64.sqrt()).abs() < 1e-12);
        assert!(brute_force_knn(&ids, &vs, Probe::Id("a"), 3).is_err());
    }

    #[test]
    fn colorfulness_rules() {
        let scores: Vec<(String, f64)> = vec![("a".into(), 0.0), ("b".into(), 1.0), ("c".into(), 10.0)];
        let got = colorfulness_neighbors(&scores, "a", 1).unwrap();
        assert_eq!(got, vec![("b".to_owned(), 1.0)]);
        let flat: Vec<(String, f64)> = ["d", "b", "a", "c"].iter().map(|s| (s.to_string(), 5.0)).collect();
        let got: Vec<String> = colorfulness_neighbors(&flat, "b", 2).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(got, ["a", "c"]);
        assert!(colorfulness_neighbors(&flat, "zz", 1).is_err());
    }

    #[test]
    fn graph_validation() {
        let ids: Vec<String> = ["a", "b"].map(String::from).to_vec();
        assert!(KnnGraph::new(ids.clone(), 1, 0, vec![vec![(1, 0.5)], vec![(0, 0.5)]]).is_ok());
        assert!(KnnGraph::new(ids.clone(), 1, 0, vec![vec![(0, 0.5)], vec![(0, 0.5)]]).is_err());
        assert!(KnnGraph::new(ids, 1, 0, vec![vec![(1, 1.5)], vec![(0, 0.5)]]).is_err());
    }
}
