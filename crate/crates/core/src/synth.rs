//! Seeded synthetic corpora with a planted gender/ethnicity structure.
//!
//! A fixture directory holds PNG images, a manifest, an embedding matrix,
//! annotations, a labor-statistics table and a matching `audit.toml`.
//! Embeddings are a gender direction plus an ethnicity-group direction plus
//! noise, so identity clustering recovers the planted groups and profession
//! images land in regions according to their drawn demographics.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{self, BlsRow, BlsTable, Corpus, Gender, ImageRecord, PromptSpec};
use crate::embedding::EmbeddingMatrix;
use crate::gateway::{self, Annotation, QuestionKey};
use crate::pixel::RgbImage;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Embedding(#[from] crate::embedding::EmbeddingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const PROFESSION_POOL: [&str; 12] = [
    "cook",
    "nurse",
    "CEO",
    "janitor",
    "pilot",
    "cashier",
    "social worker",
    "laboratory technician",
    "singer",
    "firefighter",
    "dental assistant",
    "taxi driver",
];

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub systems: Vec<String>,
    /// Taken from the front of a fixed pool of 12.
    pub professions: usize,
    pub images_per_profession: usize,
    /// Images per identity prompt and system.
    pub identity_seeds: usize,
    pub dim: usize,
    pub image_side: u32,
    pub n_clusters: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    /// Two systems, 68 identity and 32 profession images each: 200 in all.
    fn default() -> Self {
        SynthParams {
            systems: vec!["sys-a".into(), "sys-b".into()],
            professions: 8,
            images_per_profession: 4,
            identity_seeds: 1,
            dim: 24,
            image_side: 64,
            n_clusters: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub annotations: PathBuf,
    pub bls: PathBuf,
    pub config: PathBuf,
    pub corpus: Corpus,
    pub bls_table: BlsTable,
}

fn ethnicity_group(phrase: Option<&str>) -> usize {
    match phrase {
        Some("Black" | "African-American") => 0,
        None | Some("White" | "Caucasian") => 1,
        Some("Hispanic" | "Latino" | "Latinx") => 2,
        Some("East Asian" | "South Asian" | "Southeast Asian") => 3,
        Some(_) => 4,
    }
}

fn gender_group(g: Gender) -> usize {
    match g {
        Gender::Woman => 0,
        Gender::Man | Gender::Unspecified => 1,
        Gender::NonBinary => 2,
    }
}

struct Latent {
    gender: Vec<Vec<f64>>,
    ethnicity: Vec<Vec<f64>>,
}

impl Latent {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dir = |_| -> Vec<f64> {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        Latent { gender: (0..3).map(&mut dir).collect(), ethnicity: (0..5).map(&mut dir).collect() }
    }

    fn embed(&self, g: usize, e: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        self.gender[g]
            .iter()
            .zip(&self.ethnicity[e])
            .map(|(a, b)| (1.0 * a + 0.8 * b + rng.random_range(-0.15..0.15)) as f32)
            .collect()
    }
}

/// Gaussian blobs whose hue follows the latent groups; `vivid` scales
/// the saturation.
fn render(side: u32, g: usize, e: usize, vivid: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let base = [[200.0, 90.0, 80.0], [80.0, 110.0, 190.0], [120.0, 180.0, 90.0]][g];
    let tint = 25.0 * e as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(3.0..9.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    RgbImage::from_fn(side, side, |x, y| {
        let mut v = 0.0;
        for &(cx, cy, s, w) in &blobs {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            v += w * (-d2 / (2.0 * s * s)).exp();
        }
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let gray = 128.0 + 100.0 * v;
            let colored = base[c] + if c == 2 { tint } else { -tint / 2.0 } + 90.0 * v;
            *out = (gray + vivid * (colored - gray)).round().clamp(0.0, 255.0) as u8;
        }
        px
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.into(), source }
}

/// Writes a complete fixture into `dir` (created if needed).
pub fn write_fixture(dir: &Path, params: &SynthParams) -> Result<SynthFixture, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let latent = Latent::new(params.dim, &mut rng);
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let professions = &PROFESSION_POOL[..params.professions.min(PROFESSION_POOL.len())];
    let bls_rows: Vec<BlsRow> = professions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = (i as f64 + 0.5) / professions.len() as f64;
            BlsRow {
                profession: p.to_string(),
                pct_women: (5.0 + 90.0 * ((i * 5) % professions.len()) as f64 / professions.len() as f64).round(),
                pct_black: (4.0 + 20.0 * t).round(),
            }
        })
        .collect();
    let bls_table = BlsTable::new(bls_rows)?;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut annotations = Vec::new();
    let gender_word = ["woman", "man", "person"];
    for (si, system) in params.systems.iter().enumerate() {
        let vivid = if si % 2 == 0 { 1.0 } else { 0.35 };
        for (pi, prompt) in corpus::enumerate_identity_prompts().into_iter().enumerate() {
            for s in 0..params.identity_seeds {
                let (g, e) = (gender_group(prompt.gender().expect("identity")), ethnicity_group(prompt.ethnicity_phrase()));
                let id = format!("{system}_i{pi:03}_{s}");
                rows.push((id.clone(), latent.embed(g, e, &mut rng)));
                let img = render(params.image_side, g, e, vivid, &mut rng);
                let file = PathBuf::from("images").join(format!("{id}.png"));
                fs::write(dir.join(&file), img.to_png()).map_err(io_err(&dir.join(&file)))?;
                annotations.push(Annotation {
                    image_id: id.clone(),
                    caption: format!("a {} at work in an office", gender_word[g]),
                    vqa: BTreeMap::from([(QuestionKey::Appearance, gender_word[g].to_owned())]),
                    source: Default::default(),
                });
                records.push(ImageRecord { id, file, system: system.clone(), prompt: prompt.clone(), seed_index: s as u32 });
            }
        }
        for (pi, row) in bls_table.rows().iter().enumerate() {
            for k in 0..params.images_per_profession {
                // the second system exaggerates the majority gender
                let p_woman = {
                    let p = row.pct_women / 100.0;
                    if si % 2 == 1 { p * p } else { p }
                };
                let g = if rng.random_bool(p_woman) { 0 } else { 1 };
                let e = if rng.random_bool(row.pct_black / 100.0) { 0 } else { rng.random_range(1..5) };
                let id = format!("{system}_p{pi:02}_{k}");
                rows.push((id.clone(), latent.embed(g, e, &mut rng)));
                let img = render(params.image_side, g, e, vivid, &mut rng);
                let file = PathBuf::from("images").join(format!("{id}.png"));
                fs::write(dir.join(&file), img.to_png()).map_err(io_err(&dir.join(&file)))?;
                let caption = if k % 3 == 2 {
                    format!("a {} smiling at the camera", gender_word[g])
                } else {
                    format!("a {} working as a {}", gender_word[g], row.profession)
                };
                let answer = if k % 2 == 0 { gender_word[g] } else { "person" };
                annotations.push(Annotation {
                    image_id: id.clone(),
                    caption,
                    vqa: BTreeMap::from([(QuestionKey::Appearance, answer.to_owned())]),
                    source: Default::default(),
                });
                records.push(ImageRecord {
                    id,
                    file,
                    system: system.clone(),
                    prompt: PromptSpec::profession(&row.profession)?,
                    seed_index: k as u32,
                });
            }
        }
    }

    let corpus = Corpus::new(records)?.with_base_dir(dir);
    let manifest = dir.join("manifest.jsonl");
    corpus::save_manifest(&manifest, &corpus)?;
    let embeddings = dir.join("embeddings.emb");
    EmbeddingMatrix::from_rows(rows)?.save(&embeddings)?;
    let ann_path = dir.join("annotations.jsonl");
    let mut w = BufWriter::new(fs::File::create(&ann_path).map_err(io_err(&ann_path))?);
    gateway::write_annotations(&mut w, &annotations).map_err(io_err(&ann_path))?;
    w.flush().map_err(io_err(&ann_path))?;
    let bls = dir.join("bls.csv");
    corpus::write_bls(fs::File::create(&bls).map_err(io_err(&bls))?, &bls_table)?;
    let config = dir.join("audit.toml");
    let text = format!(
        "corpus = \"manifest.jsonl\"\nembeddings = \"embeddings.emb\"\nannotations = \"annotations.jsonl\"\nbls = \"bls.csv\"\nn_clusters = {}\nbootstrap_b = 200\n\n[seeds]\nbootstrap = {}\n",
        params.n_clusters, params.seed
    );
    fs::write(&config, text).map_err(io_err(&config))?;
    Ok(SynthFixture { dir: dir.into(), manifest, embeddings, annotations: ann_path, bls, config, corpus, bls_table })
}
