//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tti_audit::visual_words::SparseVector;

/// `n` sparse vectors drawn around `clusters` topic word sets, with a
/// little background noise on every vector.
pub fn clustered_sparse_vectors(n: usize, dim: u32, clusters: usize, seed: u64) -> (Vec<String>, Vec<SparseVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<(u32, f64)>> = (0..clusters)
        .map(|_| {
            index::sample(&mut rng, dim as usize, 40)
                .into_iter()
                .map(|w| (w as u32, rng.random_range(0.5..2.0)))
                .collect()
        })
        .collect();
    let mut ids = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        let topic = &topics[rng.random_range(0..clusters)];
        let mut weights: Vec<(u32, f64)> = index::sample(&mut rng, topic.len(), 25)
            .into_iter()
            .map(|j| (topic[j].0, topic[j].1 * rng.random_range(0.5..1.5)))
            .collect();
        for _ in 0..8 {
            weights.push((rng.random_range(0..dim), rng.random_range(0.0..0.5)));
        }
        ids.push(format!("img{i:05}"));
        vectors.push(SparseVector::from_weights(dim, weights));
    }
    (ids, vectors)
}

/// Fraction of exact neighbor ids recovered.
pub fn recall(approx: &[Vec<String>], exact: &[Vec<String>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (a, e) in approx.iter().zip(exact) {
        let a: HashSet<&String> = a.iter().collect();
        hit += e.iter().filter(|id| a.contains(id)).count();
        total += e.len();
    }
    hit as f64 / total as f64
}

pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

/// Textbook agglomerative Ward clustering: at every step scan all live
/// cluster pairs and merge the one whose union increases the within-cluster
/// sum of squares the least, computed directly from member coordinates.
/// Returns scipy-style merges `(a, b, height)` with `a < b`, leaves `0..n`
/// and merged clusters numbered `n + step`; height is `sqrt(2 * ΔSSE)`.
/// `margin` is the smallest gap between the best and second-best candidate
/// cost over all steps, so callers can skip inputs with near-ties.
pub struct NaiveWard {
    pub merges: Vec<(usize, usize, f64)>,
    pub margin: f64,
}

pub fn naive_ward(rows: &[Vec<f64>]) -> NaiveWard {
    let n = rows.len();
    let dim = rows[0].len();
    let mut live: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let sse = |members: &[usize]| -> f64 {
        let mut mean = vec![0.0; dim];
        for &m in members {
            for (acc, x) in mean.iter_mut().zip(&rows[m]) {
                *acc += x;
            }
        }
        for v in &mut mean {
            *v /= members.len() as f64;
        }
        members
            .iter()
            .map(|&m| rows[m].iter().zip(&mean).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
            .sum()
    };
    let mut merges = Vec::with_capacity(n - 1);
    let mut margin = f64::INFINITY;
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut second = f64::INFINITY;
        for i in 0..live.len() {
            for j in i + 1..live.len() {
                let mut union = live[i].1.clone();
                union.extend(&live[j].1);
                let cost = sse(&union) - sse(&live[i].1) - sse(&live[j].1);
                match best {
                    Some((b, _, _)) if cost >= b => second = second.min(cost),
                    Some((b, _, _)) => {
                        second = b;
                        best = Some((cost, i, j));
                    }
                    None => best = Some((cost, i, j)),
                }
            }
        }
        if live.len() > 2 {
            margin = margin.min(second - best.unwrap().0);
        }
        let (cost, i, j) = best.unwrap();
        let (b_label, b_members) = live.remove(j);
        let (a_label, a_members) = live.remove(i);
        let mut members = a_members;
        members.extend(b_members);
        merges.push((a_label.min(b_label), a_label.max(b_label), (2.0 * cost.max(0.0)).sqrt()));
        live.push((n + step, members));
    }
    NaiveWard { merges, margin }
}

fn ranked(phrases: &[&str]) -> Vec<(String, f64)> {
    phrases.iter().enumerate().map(|(i, p)| (p.to_string(), 40.0 - 8.0 * i as f64)).collect()
}

/// The ten published region summaries: cluster id, share, top gender and
/// top ethnicity phrases in rank order.
pub fn table2_regions() -> Vec<tti_audit::clusters::RegionSummary> {
    let rows: [(u32, f64, &[&str], &[&str]); 10] = [
        (4, 40.1, &["unspecified", "man"], &["Caucasian", "White", "unspecified", "Latinx"]),
        (15, 12.6, &["woman", "non-binary"], &["White", "Caucasian", "unspecified", "First Nations"]),
        (21, 9.2, &["man", "unspecified"], &["unspecified", "White"]),
        (18, 8.8, &["man", "unspecified"], &["unspecified", "White", "Caucasian"]),
        (13, 7.5, &["woman", "unspecified"], &["Latinx", "Hispanic", "Latino", "unspecified"]),
        (22, 3.1, &["unspecified", "man"], &["Southeast Asian", "Black", "Indigenous American", "Multiracial"]),
        (1, 2.7, &["woman", "non-binary"], &["Black", "African-American", "Multiracial", "unspecified"]),
        (10, 2.7, &["non-binary", "woman"], &["Latinx", "White", "Indigenous American", "unspecified"]),
        (3, 1.9, &["man", "unspecified"], &["Black", "African-American", "Multiracial", "Pacific Islander"]),
        (17, 1.3, &["non-binary"], &["White", "unspecified", "Caucasian", "Hispanic"]),
    ];
    rows.iter()
        .map(|&(cluster, share, g, e)| tti_audit::clusters::RegionSummary {
            cluster,
            members: 85,
            share: share / 100.0,
            top_gender: ranked(g),
            top_ethnicity: ranked(e),
        })
        .collect()
}

/// Twenty hand-labelled captions. Tally: 8 woman, 6 man, 2 person-only,
/// 4 unmarked.
pub const TWENTY_CAPTIONS: [&str; 20] = [
    "a woman in a lab coat",
    "a man holding a wrench",
    "a young lady at a desk",
    "a policeman standing outside",
    "a person wearing glasses",
    "two men in suits",
    "a girl with a clipboard",
    "a female doctor smiling",
    "a guy fixing a car",
    "people at a meeting",
    "a chairwoman speaking",
    "a gentleman with a hat",
    "a man and a woman cooking",
    "a woman and a man cooking",
    "a portrait of a chef",
    "a male nurse",
    "ladies in an office",
    "a person next to a woman",
    "a human being",
    "Women, WOMEN!",
];

/// Ten professions, two per quintile of `pct_women`; every profession has
/// twenty images and quintile `q` (1-based) puts `2q` of them in cluster 1.
pub fn quintile_fixture() -> (tti_audit::corpus::BlsTable, tti_audit::metrics::ProfessionAssignments) {
    use std::collections::BTreeMap;
    use tti_audit::corpus::{BlsRow, BlsTable};
    let mut rows = Vec::new();
    let mut per = BTreeMap::new();
    for i in 0..10usize {
        let q = i / 2 + 1;
        let name = format!("job{i}");
        rows.push(BlsRow { profession: name.clone(), pct_women: 10.0 * i as f64, pct_black: 5.0 });
        let a: Vec<u32> = (0..20).map(|j| u32::from(j < 2 * q)).collect();
        per.insert(name, a);
    }
    (BlsTable::new(rows).unwrap(), BTreeMap::from([("sys".to_owned(), per)]))
}

/// Draws `n` categories from `p` with a seeded generator.
pub fn multinomial(p: &[f64], n: usize, rng: &mut impl Rng) -> Vec<u32> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i as u32;
                }
            }
            (p.len() - 1) as u32
        })
        .collect()
}

/// Fraction of `trials` samples of size `n` whose diversity interval at
/// `level` contains the true entropy of `p`.
pub fn entropy_ci_coverage(p: &[f64], n: usize, trials: usize, level: f64, b: usize, seed: u64) -> f64 {
    let truth: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.log2()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for t in 0..trials {
        let sample = multinomial(p, n, &mut rng);
        let s = tti_audit::metrics::diversity_score(&sample, p.len(), level, b, seed + t as u64).unwrap();
        if s.ci_low <= truth && truth <= s.ci_high {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Scalar per-pixel colorfulness: opponent channels from raw 8-bit values,
/// population standard deviations, two passes in f64.
pub fn colorfulness_oracle(img: &tti_audit::pixel::RgbImage) -> f64 {
    let mut rg = Vec::new();
    let mut yb = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [r, g, b] = img.pixel(x, y).map(f64::from);
            rg.push(r - g);
            yb.push(0.5 * (r + g) - b);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    let (mrg, myb) = (mean(&rg), mean(&yb));
    (var(&rg, mrg) + var(&yb, myb)).sqrt() + 0.3 * (mrg * mrg + myb * myb).sqrt()
}

pub fn random_image(rng: &mut impl Rng) -> tti_audit::pixel::RgbImage {
    let (w, h) = (rng.random_range(1..90), rng.random_range(1..90));
    let pixels = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    tti_audit::pixel::RgbImage::new(w, h, pixels).unwrap()
}

/// `n` descriptor sets of 10 to 40 non-negative unit descriptors drawn
/// around 12 prototypes.
pub fn descriptor_fixture(n: usize, seed: u64) -> Vec<tti_audit::pixel::DescriptorSet> {
    use tti_audit::pixel::{DescriptorSet, Keypoint, DESCRIPTOR_LEN};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f32>> = (0..12).map(|_| (0..DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            let m = rng.random_range(10..=40);
            let descriptors = (0..m)
                .map(|_| {
                    let p = &protos[rng.random_range(0..protos.len())];
                    let mut d = [0f32; DESCRIPTOR_LEN];
                    for (o, &v) in d.iter_mut().zip(p) {
                        *o = (v + rng.random_range(-0.2..0.2)).max(0.0);
                    }
                    let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
                    d.iter_mut().for_each(|v| *v /= norm);
                    d
                })
                .collect::<Vec<_>>();
            let keypoints = (0..m).map(|_| Keypoint { x: 0.0, y: 0.0, scale: 1.0, orientation: 0.0 }).collect();
            DescriptorSet { image_id: format!("d{i:02}"), keypoints, descriptors }
        })
        .collect()
}

/// Dense tf-idf by exhaustive nearest-centroid search.
pub fn tfidf_oracle(
    sets: &[tti_audit::pixel::DescriptorSet],
    codebook: &tti_audit::visual_words::Codebook,
    idf: Option<&[f64]>,
) -> Vec<Vec<f64>> {
    let k = codebook.k;
    let counts: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| {
            let mut c = vec![0.0; k];
            for d in &s.descriptors {
                let mut best = (0, f64::INFINITY);
                for j in 0..k {
                    let dist: f64 = d
                        .iter()
                        .zip(codebook.centroid(j))
                        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                        .sum();
                    if dist < best.1 {
                        best = (j, dist);
                    }
                }
                c[best.0] += 1.0;
            }
            c
        })
        .collect();
    let idf: Vec<f64> = match idf {
        Some(v) => v.to_vec(),
        None => {
            let n = sets.len() as f64;
            (0..k)
                .map(|j| {
                    let df = counts.iter().filter(|c| c[j] > 0.0).count() as f64;
                    ((1.0 + n) / (1.0 + df)).ln() + 1.0
                })
                .collect()
        }
    };
    counts
        .iter()
        .map(|c| {
            let w: Vec<f64> = c.iter().zip(&idf).map(|(a, b)| a * b).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect()
        })
        .collect()
}

/// Runs Ward against [`naive_ward`] on 50 random unit vectors for `seeds`
/// inputs whose merge costs are separated, returning how many near-tie
/// inputs were passed over.
pub fn ward_against_oracle(seeds: usize) -> Result<usize, String> {
    use tti_audit::clusters::ward_cluster;
    use tti_audit::embedding::EmbeddingMatrix;
    let mut checked = 0;
    let mut skipped = 0;
    let mut seed = 0u64;
    while checked < seeds {
        seed += 1;
        let rows = random_unit_vectors(50, 6, seed);
        let rows64: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let norm = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
                r.iter().map(|&v| f64::from(v) / norm).collect()
            })
            .collect();
        let oracle = naive_ward(&rows64);
        if oracle.margin < 1e-9 {
            skipped += 1;
            continue;
        }
        let m = EmbeddingMatrix::from_rows(rows.iter().enumerate().map(|(i, r)| (format!("e{i:03}"), r.clone())).collect())
            .map_err(|e| e.to_string())?;
        let model = ward_cluster(&m, 5).map_err(|e| e.to_string())?;
        if model.merges.len() != oracle.merges.len() {
            return Err(format!("seed {seed}: {} merges vs {}", model.merges.len(), oracle.merges.len()));
        }
        for (i, (m, o)) in model.merges.iter().zip(&oracle.merges).enumerate() {
            if (m.left as usize, m.right as usize) != (o.0, o.1) || (m.height - o.2).abs() > 1e-9 {
                return Err(format!("seed {seed}, merge {i}: ({}, {}, {}) vs {o:?}", m.left, m.right, m.height));
            }
        }
        checked += 1;
    }
    Ok(skipped)
}

pub struct AnnRecall {
    pub graph: f64,
    pub id_probes: f64,
    pub vector_probes: f64,
}

/// Builds K=10 over 2000 clustered vectors and measures recall@10 of the
/// graph lists, of 200 random indexed probes and of 200 held-out vectors.
pub fn ann_recall() -> AnnRecall {
    use tti_audit::ann::{brute_force_knn, build_index, query, BuildParams, Probe};
    let ids_of = |v: Vec<(String, f64)>| v.into_iter().map(|p| p.0).collect::<Vec<_>>();
    let (all_ids, all_vs) = clustered_sparse_vectors(2200, 1024, 40, 2024);
    let (ids, vs) = (all_ids[..2000].to_vec(), all_vs[..2000].to_vec());
    let g = build_index(ids.clone(), &vs, &BuildParams { k: 10, seed: 17, ..Default::default() }).unwrap();
    let exact: Vec<Vec<String>> =
        ids.iter().map(|id| ids_of(brute_force_knn(&ids, &vs, Probe::Id(id), 10).unwrap())).collect();
    let graph: Vec<Vec<String>> =
        (0..ids.len()).map(|v| g.neighbors(v).iter().map(|e| ids[e.0 as usize].clone()).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let picks: Vec<usize> = (0..200).map(|_| rng.random_range(0..ids.len())).collect();
    let approx: Vec<Vec<String>> = picks.iter().map(|&i| ids_of(query(&g, &vs, Probe::Id(&ids[i]), 10).unwrap())).collect();
    let truth: Vec<Vec<String>> = picks.iter().map(|&i| exact[i].clone()).collect();

    let probes = &all_vs[2000..];
    let vapprox: Vec<Vec<String>> = probes.iter().map(|p| ids_of(query(&g, &vs, Probe::Vector(p), 10).unwrap())).collect();
    let vtruth: Vec<Vec<String>> =
        probes.iter().map(|p| ids_of(brute_force_knn(&ids, &vs, Probe::Vector(p), 10).unwrap())).collect();
    AnnRecall { graph: recall(&graph, &exact), id_probes: recall(&approx, &truth), vector_probes: recall(&vapprox, &vtruth) }
}

/// Every identity prompt, then every profession prompt, one per line.
pub fn prompt_listing() -> String {
    use tti_audit::corpus::{enumerate_identity_prompts, enumerate_profession_prompts};
    let mut out = String::new();
    for p in enumerate_identity_prompts() {
        out.push_str(&p.render());
        out.push('\n');
    }
    for p in enumerate_profession_prompts(&tti_audit::vocab::PROFESSIONS).unwrap() {
        out.push_str(&p.render());
        out.push('\n');
    }
    out
}

pub const GOLDEN_PROMPTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/prompts.txt");
