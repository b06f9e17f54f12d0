use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tti_audit::ann::{self, KnnGraph};
use tti_audit::audit::{self, AuditBundle};
use tti_audit::corpus::{self, Corpus};
use tti_audit::metrics::ProfessionAssignments;
use tti_audit::pixel::{self, RgbImage};
use tti_audit::visual_words::{self, SparseVector};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("cannot load {artifact} from {path}: {message}")]
    Artifact { artifact: &'static str, path: PathBuf, message: String },
    #[error("{artifact} refers to {id:?}, which is not in the corpus")]
    Dangling { artifact: &'static str, id: String },
    #[error("{0}")]
    Inconsistent(String),
}

/// Artifact paths for [`ServiceState::load`].
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bundle: PathBuf,
    /// Manifest or ingested corpus database.
    pub corpus: PathBuf,
    pub index: PathBuf,
    /// Bag-of-visual-words vectors the index was built from.
    pub vectors: PathBuf,
    /// `image_id,colorfulness` CSV; scores are computed from the images
    /// when absent.
    pub colorfulness: Option<PathBuf>,
}

/// Everything the API serves. Immutable once built.
#[derive(Debug)]
pub struct ServiceState {
    pub corpus: Corpus,
    pub bundle: AuditBundle,
    pub graph: KnnGraph,
    /// In graph node order.
    pub vectors: Vec<SparseVector>,
    pub colorfulness: Vec<(String, f64)>,
    pub professions: ProfessionAssignments,
}

fn artifact<T, E: ToString>(artifact: &'static str, path: &Path, r: Result<T, E>) -> Result<T, StateError> {
    r.map_err(|e| StateError::Artifact { artifact, path: path.into(), message: e.to_string() })
}

impl ServiceState {
    /// Cross-checks the parts; every id they mention must be in `corpus`.
    pub fn new(
        corpus: Corpus,
        bundle: AuditBundle,
        graph: KnnGraph,
        vectors: Vec<(String, SparseVector)>,
        colorfulness: Vec<(String, f64)>,
    ) -> Result<Self, StateError> {
        let known = |artifact, id: &String| {
            if corpus.get(id).is_some() {
                Ok(())
            } else {
                Err(StateError::Dangling { artifact, id: id.clone() })
            }
        };
        for id in graph.ids() {
            known("index", id)?;
        }
        for id in bundle.assignments.body.identity.keys().chain(bundle.assignments.body.evaluated.keys()) {
            known("assignments", id)?;
        }
        for (id, _) in &colorfulness {
            known("colorfulness", id)?;
        }
        let n_clusters = bundle.regions.body.n_clusters;
        if bundle.regions.body.summaries.len() != n_clusters {
            return Err(StateError::Inconsistent(format!(
                "regions lists {} summaries for {n_clusters} clusters",
                bundle.regions.body.summaries.len()
            )));
        }
        let vectors = ann::align_vectors(&graph, vectors).map_err(|e| StateError::Inconsistent(format!("vectors: {e}")))?;
        let professions = audit::profession_assignments(&corpus, &bundle.assignments.body.evaluated);
        Ok(ServiceState { corpus, bundle, graph, vectors, colorfulness, professions })
    }

    /// Loads every artifact, refusing to start if one is missing or broken.
    pub fn load(config: &ServiceConfig) -> Result<Self, StateError> {
        let bundle = artifact("bundle", &config.bundle, AuditBundle::load(&config.bundle))?;
        let (corpus, _) = artifact("corpus", &config.corpus, corpus::load_corpus(&config.corpus))?;
        let graph = artifact("index", &config.index, KnnGraph::load(&config.index))?;
        let vectors = artifact("vectors", &config.vectors, visual_words::load_vectors(&config.vectors))?;
        let colorfulness = match &config.colorfulness {
            Some(p) => artifact("colorfulness", p, pixel::load_colorfulness_csv(p))?,
            None => corpus
                .records()
                .iter()
                .map(|r| {
                    let path = corpus.resolve_file(r);
                    let score = RgbImage::open(&path).and_then(|img| pixel::colorfulness(&img));
                    artifact("image", &path, score).map(|s| (r.id.clone(), s))
                })
                .collect::<Result<_, _>>()?,
        };
        ServiceState::new(corpus, bundle, graph, vectors, colorfulness)
    }

    pub fn n_clusters(&self) -> usize {
        self.bundle.regions.body.n_clusters
    }

    /// Identity images of cluster `i`, in corpus order.
    pub fn cluster_members(&self, i: u32) -> impl Iterator<Item = &str> {
        let identity = &self.bundle.assignments.body.identity;
        self.corpus
            .records()
            .iter()
            .filter(move |r| identity.get(&r.id) == Some(&i))
            .map(|r| r.id.as_str())
    }

    /// Per-system assignments of one profession's images.
    pub fn profession_labels(&self, profession: &str) -> BTreeMap<&str, &[u32]> {
        self.professions
            .iter()
            .filter_map(|(s, per)| per.get(profession).map(|a| (s.as_str(), a.as_slice())))
            .collect()
    }
}
