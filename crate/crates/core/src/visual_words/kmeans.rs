use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CHUNK: usize = 2048;

/// Outcome of a Lloyd run over `n` points of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k * dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u32>,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one assignment step")
    }
}

#[inline]
fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (f64::from(x) - y) * (f64::from(x) - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
pub(crate) fn nearest(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[f32], dim: usize, centroids: &[f64], out: &mut [u32]) -> f64 {
    let partial: Vec<f64> = points
        .par_chunks(CHUNK * dim)
        .zip(out.par_chunks_mut(CHUNK))
        .map(|(pts, labels)| {
            let mut inertia = 0.0;
            for (p, l) in pts.chunks_exact(dim).zip(labels.iter_mut()) {
                let (j, d) = nearest(p, centroids, dim);
                *l = j as u32;
                inertia += d;
            }
            inertia
        })
        .collect();
    partial.iter().sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn seed_centroids(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(row(first).iter().map(|&v| f64::from(v)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[0..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(row(pick).iter().map(|&v| f64::from(v)));
        let c = &centroids[start..start + dim];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), c));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. Stops when an assignment step
/// changes nothing or after `max_iter` updates. A cluster that loses all
/// members keeps its previous centroid.
pub fn kmeans(points: &[f32], dim: usize, k: usize, seed: u64, max_iter: usize) -> KMeansFit {
    let n = points.len() / dim;
    debug_assert!(k >= 1 && n >= k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, dim, k, &mut rng);
    let mut assignments = vec![0u32; n];
    let mut history = vec![assign(points, dim, &centroids, &mut assignments)];
    let mut next = vec![0u32; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += f64::from(v);
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / inv;
                }
            }
        }
        iterations += 1;
        history.push(assign(points, dim, &centroids, &mut next));
        if next == assignments {
            converged = true;
            break;
        }
        std::mem::swap(&mut assignments, &mut next);
    }
    KMeansFit { k, dim, centroids, assignments, inertia_history: history, iterations, converged }
}
