use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use tti_audit::audit::profession_assignments;
use tti_audit::clusters::{self, ClusterModel};
use tti_audit::corpus::{self, BlsKey, Corpus, Gender, PromptKind};
use tti_audit::embedding::EmbeddingMatrix;
use tti_audit::gateway::{self, Annotation};
use tti_audit::metrics::{self, RegionAttribute, TextSource, DEFAULT_BOOTSTRAP};
use tti_audit::vocab;

use crate::inputs::{emit, load_assignments};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Md,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long, default_value_t = clusters::DEFAULT_CLUSTERS)]
    n: usize,
    #[arg(long, default_value = "model.clm")]
    out: PathBuf,
    /// Restrict the embeddings to this corpus's identity images.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
pub struct AssignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    /// Restrict the embeddings to this corpus's non-identity images.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON `{image_id: cluster}`; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DiversityArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = clusters::DEFAULT_CLUSTERS)]
    n: usize,
    #[arg(long, default_value_t = 0.99)]
    ci: f64,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct QuintilesArgs {
    #[arg(long)]
    bls: PathBuf,
    #[arg(long, default_value = "pct_women")]
    key: String,
    /// Gender or ethnicity phrase that selects the region group.
    #[arg(long)]
    group: String,
    /// Regions qualify when the phrase ranks within the top `rank`;
    /// defaults to 2 for gender and 4 for ethnicity.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Assignments of the evaluated (profession) images.
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    ci: f64,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Caption,
    Vqa,
    Both,
}

#[derive(Args)]
pub struct MarkersArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    source: Source,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_corpus(path: &PathBuf) -> Result<Corpus> {
    Ok(corpus::load_corpus(path).with_context(|| format!("loading {}", path.display()))?.0)
}

fn select_kind(emb: EmbeddingMatrix, corpus: &Corpus, identity: bool) -> Result<EmbeddingMatrix> {
    let ids: Vec<&str> = emb
        .ids()
        .iter()
        .filter(|id| corpus.get(id).is_some_and(|r| (r.prompt.kind() == PromptKind::Identity) == identity))
        .map(String::as_str)
        .collect();
    if ids.is_empty() {
        bail!("no {} images have embeddings", if identity { "identity" } else { "non-identity" });
    }
    Ok(emb.select(&ids).expect("ids come from the matrix"))
}

fn json(v: &serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn cluster(a: ClusterArgs) -> Result<()> {
    let mut emb = EmbeddingMatrix::load(&a.emb)?;
    if let Some(c) = &a.corpus {
        emb = select_kind(emb, &load_corpus(c)?, true)?;
    }
    let model = clusters::ward_cluster(&emb, a.n)?;
    model.save(&a.out)?;
    eprintln!("{} images in {} clusters; sizes {:?}", emb.len(), a.n, model.cluster_sizes());
    Ok(())
}

pub fn assign(a: AssignArgs) -> Result<()> {
    let model = ClusterModel::load(&a.model)?;
    let mut emb = EmbeddingMatrix::load(&a.emb)?;
    if let Some(c) = &a.corpus {
        emb = select_kind(emb, &load_corpus(c)?, false)?;
    }
    let map: BTreeMap<String, u32> = clusters::assign(&model, &emb)?.into_iter().collect();
    emit(a.out.as_deref(), &json(&serde_json::to_value(&map)?)?)
}

pub fn diversity(a: DiversityArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let professions = profession_assignments(&corpus, &load_assignments(&a.assignments)?);
    if professions.is_empty() {
        bail!("none of the assigned images is a profession image of the corpus");
    }
    let report = metrics::diversity_report(&professions, a.n, a.ci, a.bootstrap, a.seed)?;
    let text = match a.format {
        Format::Json => json(&serde_json::to_value(&report)?)?,
        Format::Md => metrics::diversity_markdown(&report),
    };
    emit(a.out.as_deref(), &text)
}

pub fn quintiles(a: QuintilesArgs) -> Result<()> {
    let key = BlsKey::parse(&a.key).with_context(|| format!("unknown key {:?}; use pct_women or pct_black", a.key))?;
    let (attr, default_rank) = if Gender::parse(&a.group).is_some() {
        (RegionAttribute::Gender, 2)
    } else if vocab::is_known_ethnicity(&a.group) {
        (RegionAttribute::Ethnicity, 4)
    } else {
        bail!("{:?} is neither a gender nor an ethnicity phrase", a.group);
    };
    let corpus = load_corpus(&a.corpus)?;
    let model = ClusterModel::load(&a.model)?;
    let summaries = clusters::summarize_regions(&model, &corpus, &model.assignments())?;
    let group: BTreeSet<u32> = metrics::select_region_group(&summaries, attr, &a.group, a.rank.unwrap_or(default_rank))?;
    eprintln!("regions for {:?}: {group:?}", a.group);
    let bins = metrics::quintile_bins(&corpus::load_bls(&a.bls)?, key)?;
    let professions = profession_assignments(&corpus, &load_assignments(&a.assignments)?);
    let report = metrics::quintile_report(&professions, &group, &bins, a.ci, a.bootstrap, a.seed)?;
    let text = match a.format {
        Format::Json => json(&serde_json::to_value(&report)?)?,
        Format::Md => metrics::quintiles_markdown(&report),
    };
    emit(a.out.as_deref(), &text)
}

pub fn markers(a: MarkersArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let annotations: Vec<Annotation> = gateway::load_annotations(&a.annotations, None)?
        .into_iter()
        .filter(|x| corpus.get(&x.image_id).is_some_and(|r| r.prompt.kind() == PromptKind::Profession))
        .collect();
    if annotations.is_empty() {
        bail!("no annotations for profession images of the corpus");
    }
    let sources: &[TextSource] = match a.source {
        Source::Caption => &[TextSource::Caption],
        Source::Vqa => &[TextSource::VqaAppearance],
        Source::Both => &[TextSource::Caption, TextSource::VqaAppearance],
    };
    let stats: Vec<_> = sources.iter().map(|&s| metrics::gender_marker_stats(&annotations, &corpus, s)).collect();
    let text = match a.format {
        Format::Json => json(&serde_json::to_value(&stats)?)?,
        Format::Md => metrics::markers_markdown(&stats),
    };
    emit(a.out.as_deref(), &text)
}
