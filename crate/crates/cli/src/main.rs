mod analysis;
mod features;
mod inputs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tti_audit::audit::{run_audit, AuditConfig, RunOptions, StageStatus};
use tti_audit::corpus::{self, CorpusDb};
use tti_audit::gateway::{self, FetchOptions, HttpBackend, QuestionKey, RetryPolicy};
use tti_audit::synth::{write_fixture, SynthParams};
use tti_audit::vocab;
use tti_audit_service::{parse_origin, serve, ServiceConfig, ServiceState};

#[derive(Parser)]
#[command(name = "tti-audit", version, about = "Bias audit toolkit for text-to-image systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PromptSet {
    Identity,
    Profession,
    Adjective,
    /// Identity then profession prompts.
    Audit,
}

#[derive(Subcommand)]
enum Command {
    /// Print the prompt set, one prompt per line.
    Prompts {
        #[arg(long, value_enum, default_value = "audit")]
        set: PromptSet,
        /// Profession list (one per line) instead of the built-in one.
        #[arg(long)]
        professions: Option<PathBuf>,
    },
    /// Validate a manifest (and labor statistics) into a corpus database.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bls: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip checking that every image file exists.
        #[arg(long)]
        no_file_check: bool,
    },
    /// Caption every image and ask the VQA questions.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        endpoint: String,
        #[arg(long, value_delimiter = ',', default_value = "appearance,gender,ethnicity")]
        questions: Vec<String>,
        /// Questions whose answers are restricted to their label set.
        #[arg(long, value_delimiter = ',', default_value = "gender,ethnicity")]
        constrain: Vec<String>,
        #[arg(long, default_value = "annotations.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
    /// Fetch question-conditioned image embeddings.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value = "appearance")]
        question: String,
        #[arg(long, default_value = "embeddings.emb")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
    /// Extract SIFT descriptors and colorfulness scores.
    Features(features::FeaturesArgs),
    /// Train the visual-word codebook over a feature directory.
    Codebook(features::CodebookArgs),
    /// Turn descriptor sets into tf-idf visual-word vectors.
    Vectorize(features::VectorizeArgs),
    /// Build the approximate nearest-neighbor graph.
    Index(features::IndexArgs),
    /// Nearest neighbors of one image.
    Knn(features::KnnArgs),
    /// Ward clustering of identity embeddings.
    Cluster(analysis::ClusterArgs),
    /// Assign images to the nearest cluster centroid.
    Assign(analysis::AssignArgs),
    /// Entropy of cluster assignments with bootstrap intervals.
    Diversity(analysis::DiversityArgs),
    /// Region-group shares across labor-statistics quintiles.
    Quintiles(analysis::QuintilesArgs),
    /// Gender-marker statistics of captions or VQA answers.
    Markers(analysis::MarkersArgs),
    /// Run every audit stage and write a report bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave timestamps out so reruns are byte-identical.
        #[arg(long)]
        canonical: bool,
    },
    /// Serve the explorer API.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Vectors the index was built from; defaults to the index's directory.
        #[arg(long)]
        vecs: Option<PathBuf>,
        /// Colorfulness CSV; scores are computed from the images when absent.
        #[arg(long)]
        colorfulness: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: SocketAddr,
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Write a seeded synthetic corpus with a ready-to-run audit.toml.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "sys-a,sys-b")]
        systems: Vec<String>,
        #[arg(long, default_value_t = 8)]
        professions: usize,
        #[arg(long, default_value_t = 4)]
        images_per_profession: usize,
        #[arg(long, default_value_t = 8)]
        clusters: usize,
    },
}

fn question(name: &str) -> Result<QuestionKey> {
    QuestionKey::parse(name.trim()).with_context(|| format!("unknown question {name:?}; use appearance, gender or ethnicity"))
}

fn fetch_options(parallelism: usize) -> FetchOptions {
    FetchOptions { retry: RetryPolicy::default(), parallelism }
}

fn prompts(set: PromptSet, professions: Option<PathBuf>) -> Result<()> {
    let names: Vec<String> = match professions {
        Some(p) => std::fs::read_to_string(&p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => vocab::PROFESSIONS.iter().map(|s| s.to_string()).collect(),
    };
    let mut specs = Vec::new();
    if matches!(set, PromptSet::Identity | PromptSet::Audit) {
        specs.extend(corpus::enumerate_identity_prompts());
    }
    if matches!(set, PromptSet::Profession | PromptSet::Audit) {
        specs.extend(corpus::enumerate_profession_prompts(&names)?);
    }
    if set == PromptSet::Adjective {
        specs.extend(corpus::enumerate_adjective_prompts());
    }
    for s in specs {
        println!("{}", s.render());
    }
    Ok(())
}

fn ingest(manifest: PathBuf, bls: Option<PathBuf>, out: PathBuf, no_file_check: bool) -> Result<()> {
    let mut corpus = corpus::load_manifest(&manifest)?;
    if let Some(dir) = corpus.base_dir() {
        let abs = std::path::absolute(dir).with_context(|| format!("resolving {}", dir.display()))?;
        corpus = corpus.with_base_dir(abs);
    }
    if !no_file_check {
        corpus.check_files()?;
    }
    let bls = bls.map(corpus::load_bls).transpose()?;
    let db = CorpusDb::from_parts(&corpus, bls);
    std::fs::write(&out, serde_json::to_vec(&db)?).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("{} images from {} systems", corpus.len(), corpus.systems().len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn annotate(
    corpus: PathBuf,
    endpoint: String,
    questions: Vec<String>,
    constrain: Vec<String>,
    out: PathBuf,
    parallelism: usize,
    timeout_secs: u64,
) -> Result<()> {
    let (corpus, _) = corpus::load_corpus(&corpus)?;
    let questions = questions.iter().map(|q| question(q)).collect::<Result<Vec<_>>>()?;
    let constrained = constrain
        .iter()
        .filter(|c| !c.is_empty() && *c != "none")
        .map(|q| question(q))
        .collect::<Result<Vec<_>>>()?;
    if let Some(q) = constrained.iter().find(|q| q.default_vocabulary().is_none()) {
        bail!("{} has no label set and cannot be constrained", q.name());
    }
    let backend = HttpBackend::new(&endpoint, Duration::from_secs(timeout_secs));
    let batch = gateway::fetch_annotations(
        &corpus,
        &backend,
        &questions,
        &gateway::default_constraints(&constrained),
        &fetch_options(parallelism),
    )?;
    inputs::write_with(&out, |w| gateway::write_annotations(w, &batch.annotations))?;
    if !batch.failures.is_empty() {
        let path = out.with_extension("failures.jsonl");
        let lines: Vec<String> = batch.failures.iter().map(|f| serde_json::to_string(f).expect("serializes")).collect();
        std::fs::write(&path, lines.join("\n") + "\n").with_context(|| format!("writing {}", path.display()))?;
        eprintln!("warning: {} image(s) failed; see {}", batch.failures.len(), path.display());
    }
    eprintln!("annotated {} of {} images", batch.annotations.len(), corpus.len());
    Ok(())
}

fn embed(corpus: PathBuf, endpoint: String, q: String, out: PathBuf, parallelism: usize, timeout_secs: u64) -> Result<()> {
    let (corpus, _) = corpus::load_corpus(&corpus)?;
    let backend = HttpBackend::new(&endpoint, Duration::from_secs(timeout_secs));
    let m = gateway::fetch_embeddings(&corpus, &backend, question(&q)?, &fetch_options(parallelism))?;
    m.save(&out)?;
    eprintln!("{} embeddings of dimension {}", m.len(), m.dim());
    Ok(())
}

fn run(config: PathBuf, out: PathBuf, canonical: bool) -> Result<()> {
    let config = AuditConfig::load(&config)?;
    let bundle = run_audit(&config, &out, RunOptions { canonical })?;
    for s in &bundle.provenance.stages {
        let status = match s.status {
            StageStatus::Ok => "ok",
            StageStatus::Skipped => "skipped",
            StageStatus::Failed => "failed",
        };
        eprintln!("{:<10} {status}", s.name);
    }
    eprintln!("bundle written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Prompts { set, professions } => prompts(set, professions),
        Command::Ingest { manifest, bls, out, no_file_check } => ingest(manifest, bls, out, no_file_check),
        Command::Annotate { corpus, endpoint, questions, constrain, out, parallelism, timeout_secs } => {
            annotate(corpus, endpoint, questions, constrain, out, parallelism, timeout_secs)
        }
        Command::Embed { corpus, endpoint, question, out, parallelism, timeout_secs } => {
            embed(corpus, endpoint, question, out, parallelism, timeout_secs)
        }
        Command::Features(a) => features::features(a),
        Command::Codebook(a) => features::codebook(a),
        Command::Vectorize(a) => features::vectorize(a),
        Command::Index(a) => features::index(a),
        Command::Knn(a) => features::knn(a),
        Command::Cluster(a) => analysis::cluster(a),
        Command::Assign(a) => analysis::assign(a),
        Command::Diversity(a) => analysis::diversity(a),
        Command::Quintiles(a) => analysis::quintiles(a),
        Command::Markers(a) => analysis::markers(a),
        Command::Run { config, out, canonical } => run(config, out, canonical),
        Command::Serve { bundle, corpus, index, vecs, colorfulness, addr, cors_origin } => {
            let vectors = vecs.unwrap_or_else(|| index.parent().unwrap_or(std::path::Path::new(".")).to_path_buf());
            let config =
                ServiceConfig { bundle, corpus, index, vectors: inputs::vectors_file(&vectors), colorfulness };
            let origin = cors_origin.as_deref().map(parse_origin).transpose()?;
            let state = ServiceState::load(&config)?;
            eprintln!("serving {} images on http://{addr}", state.corpus.len());
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr, origin))?;
            Ok(())
        }
        Command::Synth { out, seed, systems, professions, images_per_profession, clusters } => {
            let params = SynthParams {
                systems,
                professions,
                images_per_profession,
                n_clusters: clusters,
                seed,
                ..SynthParams::default()
            };
            let fx = write_fixture(&out, &params)?;
            eprintln!("{} images; run with: tti-audit run --config {} --out bundle", fx.corpus.len(), fx.config.display());
            Ok(())
        }
    }
}
