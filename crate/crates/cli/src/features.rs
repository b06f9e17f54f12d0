use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use tti_audit::ann::{self, build_index, BuildParams, KnnGraph, Probe};
use tti_audit::corpus;
use tti_audit::pixel::{self, load_descriptors, sift_descriptors, DescriptorSet, RgbImage};
use tti_audit::visual_words::{self, compute_idf, term_counts_all, train_codebook, vectorize_all, Codebook};

use crate::inputs::{self, COLORFULNESS_FILE, DESCRIPTOR_EXT, INDEX_FILE, VECTORS_FILE};

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "feats")]
    out: PathBuf,
}

#[derive(Args)]
pub struct CodebookArgs {
    #[arg(long, default_value = "feats")]
    feats: PathBuf,
    #[arg(long, default_value_t = visual_words::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = visual_words::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value = "codebook.cbk")]
    out: PathBuf,
}

#[derive(Args)]
pub struct VectorizeArgs {
    #[arg(long, default_value = "codebook.cbk")]
    codebook: PathBuf,
    #[arg(long, default_value = "feats")]
    feats: PathBuf,
    #[arg(long, default_value = "vecs")]
    out: PathBuf,
}

#[derive(Args)]
pub struct IndexArgs {
    /// Vectors file or the directory holding it.
    #[arg(long, default_value = "vecs")]
    vecs: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1 builds on the calling thread; the graph is the same either way.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Defaults to index.knn beside the vectors.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnnBy {
    Bovw,
    Colorfulness,
}

#[derive(Args)]
pub struct KnnArgs {
    #[arg(long)]
    probe: String,
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long, value_enum, default_value = "bovw")]
    by: KnnBy,
    #[arg(long, default_value = "vecs")]
    vecs: PathBuf,
    /// Defaults to index.knn beside the vectors.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value = "feats/colorfulness.csv")]
    colorfulness: PathBuf,
    /// Print a JSON array instead of tab-separated lines.
    #[arg(long)]
    json: bool,
}

pub fn features(a: FeaturesArgs) -> Result<()> {
    let (corpus, _) = corpus::load_corpus(&a.corpus)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let scores = corpus
        .records()
        .par_iter()
        .map(|r| {
            let path = corpus.resolve_file(r);
            let img = RgbImage::open(&path).with_context(|| format!("image {}", r.id))?;
            let set = sift_descriptors(&r.id, &img).with_context(|| format!("image {}", r.id))?;
            set.save(a.out.join(format!("{}.{DESCRIPTOR_EXT}", r.id)))?;
            Ok((r.id.clone(), pixel::colorfulness(&img)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = a.out.join(COLORFULNESS_FILE);
    pixel::write_colorfulness_csv(fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?, &scores)?;
    eprintln!("features for {} images in {}", scores.len(), a.out.display());
    Ok(())
}

/// Every descriptor file in `dir`, ordered by image id.
fn load_feature_dir(dir: &Path) -> Result<Vec<DescriptorSet>> {
    let mut paths: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == DESCRIPTOR_EXT))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_owned(), p)))
        .collect();
    if paths.is_empty() {
        bail!("no .{DESCRIPTOR_EXT} files in {}", dir.display());
    }
    paths.sort();
    paths
        .par_iter()
        .map(|(id, p)| load_descriptors(id, p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn codebook(a: CodebookArgs) -> Result<()> {
    let sets = load_feature_dir(&a.feats)?;
    let (codebook, fit) = train_codebook(&sets, a.k, a.seed, a.max_iter)?;
    let idf = compute_idf(&term_counts_all(&sets, &codebook), codebook.k);
    codebook.with_idf(&idf)?.save(&a.out)?;
    eprintln!(
        "{} words from {} images; inertia {:.4} after {} iterations",
        a.k,
        sets.len(),
        fit.inertia(),
        fit.iterations
    );
    Ok(())
}

pub fn vectorize(a: VectorizeArgs) -> Result<()> {
    let codebook = Codebook::load(&a.codebook)?;
    if codebook.idf.is_empty() {
        bail!("{} carries no idf weights", a.codebook.display());
    }
    let sets = load_feature_dir(&a.feats)?;
    let vectors = vectorize_all(&sets, &codebook)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pairs: Vec<_> = sets.iter().map(|s| s.image_id.clone()).zip(vectors).collect();
    visual_words::save_vectors(a.out.join(VECTORS_FILE), &pairs)?;
    eprintln!("{} vectors in {}", pairs.len(), a.out.display());
    Ok(())
}

fn default_index(vecs: &Path) -> PathBuf {
    let file = inputs::vectors_file(vecs);
    file.parent().unwrap_or(Path::new(".")).join(INDEX_FILE)
}

pub fn index(a: IndexArgs) -> Result<()> {
    let (ids, vectors): (Vec<String>, Vec<_>) = visual_words::load_vectors(inputs::vectors_file(&a.vecs))?.into_iter().unzip();
    let params = BuildParams { k: a.k, seed: a.seed, workers: a.workers, ..BuildParams::default() };
    let graph = build_index(ids, &vectors, &params)?;
    let out = a.out.unwrap_or_else(|| default_index(&a.vecs));
    graph.save(&out)?;
    eprintln!("{} nodes of degree {} in {}", graph.len(), graph.degree(), out.display());
    Ok(())
}

pub fn knn(a: KnnArgs) -> Result<()> {
    let found = match a.by {
        KnnBy::Bovw => {
            let graph = KnnGraph::load(a.index.unwrap_or_else(|| default_index(&a.vecs)))?;
            let vectors = ann::align_vectors(&graph, visual_words::load_vectors(inputs::vectors_file(&a.vecs))?)?;
            ann::query(&graph, &vectors, Probe::Id(&a.probe), a.k)?
        }
        KnnBy::Colorfulness => ann::colorfulness_neighbors(&pixel::load_colorfulness_csv(&a.colorfulness)?, &a.probe, a.k)?,
    };
    if a.json {
        let rows: Vec<_> = found.iter().map(|(id, score)| serde_json::json!({ "id": id, "score": score })).collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        for (id, score) in found {
            println!("{id}\t{score}");
        }
    }
    Ok(())
}
