//! Bias measures over cluster assignments and annotations.

mod markdown;
mod markers;
mod quintiles;
mod regions;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use markdown::{diversity_markdown, markers_markdown, quintiles_markdown, regions_markdown};
pub use markers::{
    classify_text, gender_marker_stats, marker_tally, profession_mention_rate, tokenize, MarkerStats, MarkerTally,
    SystemMarkers, TextMarker, TextSource,
};
pub use quintiles::{quintile_bins, quintile_report, GroupShare, ProfessionAssignments, QuintileBins, QuintileReport, QuintileRow};
pub use regions::{select_region_group, RegionAttribute};

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no assignments to measure")]
    Empty,
    #[error("cluster id {id} is not below n_clusters = {n_clusters}")]
    ClusterOutOfRange { id: u32, n_clusters: usize },
    #[error("bootstrap needs at least two observations")]
    Degenerate,
    #[error("bootstrap needs B >= {MIN_BOOTSTRAP}, got {0}")]
    TooFewResamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("quintiles need at least 5 professions, got {0}")]
    TooFewProfessions(usize),
    #[error("unknown {kind} phrase {phrase:?}")]
    UnknownPhrase { kind: &'static str, phrase: String },
}

/// Shannon entropy in bits of the distribution given by `counts`.
///
/// Categories with equal counts are summed together, which keeps uniform
/// distributions at exactly `log2(k)`.
pub fn entropy_from_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts.iter().filter(|&&c| c > 0) {
        *groups.entry(c).or_default() += 1;
    }
    let n = n as f64;
    groups
        .into_iter()
        .map(|(c, m)| {
            let c = c as f64;
            (m as f64 * c / n) * (n / c).log2()
        })
        .sum()
}

fn cluster_counts(assignments: &[u32], n_clusters: usize) -> Result<Vec<usize>, MetricsError> {
    let mut counts = vec![0usize; n_clusters];
    for &a in assignments {
        *counts
            .get_mut(a as usize)
            .ok_or(MetricsError::ClusterOutOfRange { id: a, n_clusters })? += 1;
    }
    Ok(counts)
}

/// Entropy (bits) of the spread of `assignments` over `n_clusters` regions.
pub fn assignment_entropy(assignments: &[u32], n_clusters: usize) -> Result<f64, MetricsError> {
    if assignments.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(entropy_from_counts(&cluster_counts(assignments, n_clusters)?))
}

/// Type-7 quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for `statistic` over `data`.
///
/// Resample `b` draws from its own ChaCha8 stream under `seed`, so the
/// result does not depend on thread scheduling.
pub fn bootstrap_ci<T, F>(data: &[T], statistic: F, level: f64, b: usize, seed: u64) -> Result<(f64, f64), MetricsError>
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::Level(level));
    }
    if b < MIN_BOOTSTRAP {
        return Err(MetricsError::TooFewResamples(b));
    }
    if data.len() < 2 {
        return Err(MetricsError::Degenerate);
    }
    let n = data.len();
    let mut stats: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let sample: Vec<T> = (0..n).map(|_| data[rng.random_range(0..n)].clone()).collect();
            statistic(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub entropy_bits: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub level: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
}

/// Assignment entropy with its bootstrap interval. The interval is widened
/// to contain the point estimate when resampling bias pushes it aside.
pub fn diversity_score(
    assignments: &[u32],
    n_clusters: usize,
    level: f64,
    b: usize,
    seed: u64,
) -> Result<DiversityScore, MetricsError> {
    let entropy_bits = assignment_entropy(assignments, n_clusters)?;
    let (lo, hi) = bootstrap_ci(
        assignments,
        |s| entropy_from_counts(&cluster_counts(s, n_clusters).expect("ids checked above")),
        level,
        b,
        seed,
    )?;
    Ok(DiversityScore {
        entropy_bits,
        ci_low: lo.min(entropy_bits),
        ci_high: hi.max(entropy_bits),
        n: assignments.len(),
        level,
        bootstrap_b: b,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDiversity {
    pub overall: DiversityScore,
    pub professions: BTreeMap<String, DiversityScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub n_clusters: usize,
    pub level: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
    pub systems: BTreeMap<String, SystemDiversity>,
    /// Professions too small to bootstrap, one line each.
    pub errata: Vec<String>,
}

/// Diversity of every system's pooled assignments and of each profession.
pub fn diversity_report(
    assignments: &ProfessionAssignments,
    n_clusters: usize,
    level: f64,
    b: usize,
    seed: u64,
) -> Result<DiversityReport, MetricsError> {
    let mut systems = BTreeMap::new();
    let mut errata = Vec::new();
    for (system, per_profession) in assignments {
        let pooled: Vec<u32> = per_profession.values().flatten().copied().collect();
        let overall = diversity_score(&pooled, n_clusters, level, b, seed)?;
        let mut professions = BTreeMap::new();
        for (profession, a) in per_profession {
            if a.len() < 2 {
                errata.push(format!("{system}: {profession:?} has {} image(s)", a.len()));
                continue;
            }
            professions.insert(profession.clone(), diversity_score(a, n_clusters, level, b, seed)?);
        }
        systems.insert(system.clone(), SystemDiversity { overall, professions });
    }
    Ok(DiversityReport { n_clusters, level, bootstrap_b: b, seed, systems, errata })
}
