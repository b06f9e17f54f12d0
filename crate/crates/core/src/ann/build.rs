//! NN-descent graph construction.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{AnnError, KnnGraph};
use crate::visual_words::SparseVector;

/// Nodes whose local joins are evaluated before the results are applied.
const JOIN_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    pub k: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub max_iters: usize,
    pub delta: f64,
    /// 1 runs the local join on the calling thread; anything else uses the
    /// rayon pool. Both produce the same graph.
    pub workers: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams { k: 20, seed: 0, sample_rate: 0.5, max_iters: 12, delta: 0.001, workers: 1 }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    node: u32,
    sim: f64,
    fresh: bool,
}

/// `a` ranks before `b`: higher similarity, then lower index.
#[inline]
fn better(a_sim: f64, a_node: u32, b_sim: f64, b_node: u32) -> bool {
    a_sim > b_sim || (a_sim == b_sim && a_node < b_node)
}

struct Lists {
    k: usize,
    lists: Vec<Vec<Entry>>,
}

impl Lists {
    /// Inserts `cand` into `node`'s list if it beats the current worst.
    fn update(&mut self, node: u32, cand: u32, sim: f64) -> bool {
        if node == cand {
            return false;
        }
        let list = &mut self.lists[node as usize];
        if list.iter().any(|e| e.node == cand) {
            return false;
        }
        if list.len() == self.k {
            let worst = list[self.k - 1];
            if !better(sim, cand, worst.sim, worst.node) {
                return false;
            }
            list.pop();
        }
        let pos = list.iter().position(|e| better(sim, cand, e.sim, e.node)).unwrap_or(list.len());
        list.insert(pos, Entry { node: cand, sim, fresh: true });
        true
    }
}

#[inline]
fn similarity(vectors: &[SparseVector], a: u32, b: u32) -> f64 {
    vectors[a as usize].dot(&vectors[b as usize]).clamp(0.0, 1.0)
}

fn sample_into(src: &mut Vec<u32>, cap: usize, rng: &mut ChaCha8Rng) {
    if src.len() > cap {
        src.shuffle(rng);
        src.truncate(cap);
    }
}

fn local_join(vectors: &[SparseVector], new: &[u32], old: &[u32]) -> Vec<(u32, u32, f64)> {
    let mut out = Vec::with_capacity(new.len() * (new.len() + old.len()));
    for (i, &a) in new.iter().enumerate() {
        for &b in &new[i + 1..] {
            if a != b {
                out.push((a, b, similarity(vectors, a, b)));
            }
        }
        for &b in old {
            if a != b {
                out.push((a, b, similarity(vectors, a, b)));
            }
        }
    }
    out
}

pub fn build_index(ids: Vec<String>, vectors: &[SparseVector], params: &BuildParams) -> Result<KnnGraph, AnnError> {
    let n = vectors.len();
    let k = params.k;
    if k == 0 {
        return Err(AnnError::InvalidParameter("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(AnnError::TooFewVectors { have: n, k });
    }
    if ids.len() != n {
        return Err(AnnError::InvalidParameter(format!("{} ids for {n} vectors", ids.len())));
    }
    if !(params.sample_rate > 0.0 && params.sample_rate <= 1.0) {
        return Err(AnnError::InvalidParameter(format!("sample rate {} outside (0, 1]", params.sample_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut lists = Lists { k, lists: Vec::with_capacity(n) };
    for v in 0..n {
        let mut list: Vec<Entry> = index::sample(&mut rng, n - 1, k)
            .into_iter()
            .map(|j| {
                let u = if j >= v { j + 1 } else { j } as u32;
                Entry { node: u, sim: similarity(vectors, v as u32, u), fresh: true }
            })
            .collect();
        list.sort_by(|a, b| b.sim.total_cmp(&a.sim).then(a.node.cmp(&b.node)));
        lists.lists.push(list);
    }

    let sample = ((params.sample_rate * k as f64).ceil() as usize).max(1);
    for _ in 0..params.max_iters {
        let mut old: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut new: Vec<Vec<u32>> = vec![Vec::new(); n];
        for v in 0..n {
            let mut fresh = Vec::new();
            for e in &lists.lists[v] {
                if e.fresh {
                    fresh.push(e.node);
                } else {
                    old[v].push(e.node);
                }
            }
            sample_into(&mut fresh, sample, &mut rng);
            for e in lists.lists[v].iter_mut() {
                if fresh.contains(&e.node) {
                    e.fresh = false;
                }
            }
            new[v] = fresh;
        }
        let mut old_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut new_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        for v in 0..n {
            for &u in &old[v] {
                old_rev[u as usize].push(v as u32);
            }
            for &u in &new[v] {
                new_rev[u as usize].push(v as u32);
            }
        }
        for v in 0..n {
            sample_into(&mut old_rev[v], sample, &mut rng);
            sample_into(&mut new_rev[v], sample, &mut rng);
            for u in old_rev[v].drain(..) {
                if !old[v].contains(&u) {
                    old[v].push(u);
                }
            }
            for u in new_rev[v].drain(..) {
                if !new[v].contains(&u) {
                    new[v].push(u);
                }
            }
        }

        let mut updates = 0usize;
        for start in (0..n).step_by(JOIN_BLOCK) {
            let end = (start + JOIN_BLOCK).min(n);
            let pairs: Vec<Vec<(u32, u32, f64)>> = if params.workers == 1 {
                (start..end).map(|v| local_join(vectors, &new[v], &old[v])).collect()
            } else {
                (start..end).into_par_iter().map(|v| local_join(vectors, &new[v], &old[v])).collect()
            };
            for (a, b, sim) in pairs.into_iter().flatten() {
                updates += usize::from(lists.update(a, b, sim));
                updates += usize::from(lists.update(b, a, sim));
            }
        }
        if (updates as f64) < params.delta * (n * k) as f64 {
            break;
        }
    }

    let neighbors = lists
        .lists
        .into_iter()
        .map(|l| l.into_iter().map(|e| (e.node, e.sim as f32)).collect())
        .collect();
    KnnGraph::new(ids, k, params.seed, neighbors)
}
