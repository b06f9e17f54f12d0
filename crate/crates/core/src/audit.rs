//! Batch audit: cluster, assign, summarize, then diversity, quintile and
//! marker reports, written as a bundle directory with a provenance file.
//!
//! Bundle layout:
//!
//! ```text
//! bundle/
//!   provenance.json
//!   regions.json      regions.md
//!   assignments.json
//!   diversity.json    diversity.md
//!   quintiles.json    quintiles.md
//!   markers.json      markers.md
//! ```
//!
//! Every document carries the config hash and seeds. With
//! [`RunOptions::canonical`] the bundle is a pure function of the config
//! and its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::sha256_hex;
use crate::clusters::{self, ClusterModel, RegionSummary};
use crate::corpus::{self, BlsKey, Corpus, Gender, PromptKind};
use crate::embedding::EmbeddingMatrix;
use crate::gateway::{self, Annotation};
use crate::metrics::{self, DiversityReport, MarkerStats, ProfessionAssignments, QuintileReport, RegionAttribute, TextSource};
use crate::vocab;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Diversity,
    Quintiles,
    Markers,
}

impl ReportKind {
    pub const ALL: [ReportKind; 3] = [ReportKind::Diversity, ReportKind::Quintiles, ReportKind::Markers];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Diversity => "diversity",
            ReportKind::Quintiles => "quintiles",
            ReportKind::Markers => "markers",
        }
    }

    pub fn parse(s: &str) -> Option<ReportKind> {
        ReportKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub bootstrap: u64,
}

impl Seeds {
    pub fn as_map(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([("bootstrap".to_owned(), self.bootstrap)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupConfig {
    pub gender_phrase: String,
    pub gender_rank_max: usize,
    pub ethnicity_phrase: String,
    pub ethnicity_rank_max: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            gender_phrase: "woman".into(),
            gender_rank_max: 2,
            ethnicity_phrase: "Black".into(),
            ethnicity_rank_max: 4,
        }
    }
}

fn default_clusters() -> usize {
    clusters::DEFAULT_CLUSTERS
}
fn default_ci() -> f64 {
    0.95
}
fn default_diversity_ci() -> f64 {
    0.99
}
fn default_b() -> usize {
    metrics::DEFAULT_BOOTSTRAP
}
fn default_reports() -> Vec<ReportKind> {
    ReportKind::ALL.to_vec()
}
fn default_seeds() -> Seeds {
    Seeds { bootstrap: 0 }
}

/// Audit settings. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bls: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    /// A fitted model to reuse instead of clustering again.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_model: Option<PathBuf>,
    #[serde(default = "default_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    #[serde(default = "default_diversity_ci")]
    pub diversity_ci_level: f64,
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_reports")]
    pub reports: Vec<ReportKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default)]
    pub groups: GroupConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl AuditConfig {
    pub fn new(corpus: impl Into<PathBuf>, embeddings: impl Into<PathBuf>) -> Self {
        AuditConfig {
            corpus: corpus.into(),
            embeddings: embeddings.into(),
            bls: None,
            annotations: None,
            codebook: None,
            index: None,
            cluster_model: None,
            n_clusters: default_clusters(),
            ci_level: default_ci(),
            diversity_ci_level: default_diversity_ci(),
            bootstrap_b: default_b(),
            reports: default_reports(),
            seeds: default_seeds(),
            groups: GroupConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, AuditError> {
        let mut c: AuditConfig = toml::from_str(text).map_err(|e| AuditError::Config(e.to_string()))?;
        c.base_dir = base_dir.into();
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AuditError::Io { path: path.into(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// SHA-256 of the canonical TOML form (paths as written).
    pub fn hash(&self) -> String {
        sha256_hex(toml::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn wants(&self, kind: ReportKind) -> bool {
        self.reports.contains(&kind)
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<(), AuditError> {
        let bad = |m: String| Err(AuditError::Config(m));
        if self.n_clusters < 2 {
            return bad(format!("n_clusters must be at least 2, got {}", self.n_clusters));
        }
        for (name, level) in [("ci_level", self.ci_level), ("diversity_ci_level", self.diversity_ci_level)] {
            if !(level > 0.0 && level < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {level}"));
            }
        }
        if self.bootstrap_b < metrics::MIN_BOOTSTRAP {
            return bad(format!("bootstrap_b must be at least {}, got {}", metrics::MIN_BOOTSTRAP, self.bootstrap_b));
        }
        if self.wants(ReportKind::Quintiles) && self.bls.is_none() {
            return bad("quintiles report requested but no `bls` path configured".into());
        }
        if self.wants(ReportKind::Markers) && self.annotations.is_none() {
            return bad("markers report requested but no `annotations` path configured".into());
        }
        let g = &self.groups;
        if Gender::parse(&g.gender_phrase).is_none_or(|x| x.phrase() != g.gender_phrase) {
            return bad(format!("unknown gender phrase {:?}", g.gender_phrase));
        }
        if g.ethnicity_phrase != vocab::UNSPECIFIED && !vocab::is_known_ethnicity(&g.ethnicity_phrase) {
            return bad(format!("unknown ethnicity phrase {:?}", g.ethnicity_phrase));
        }
        for (role, p) in self.inputs() {
            let full = self.resolve(p);
            if !full.is_file() {
                return bad(format!("{role} file {} does not exist", full.display()));
            }
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v: Vec<(&'static str, &Path)> = vec![("corpus", &self.corpus), ("embeddings", &self.embeddings)];
        let optional = [
            ("bls", &self.bls),
            ("annotations", &self.annotations),
            ("codebook", &self.codebook),
            ("index", &self.index),
            ("cluster_model", &self.cluster_model),
        ];
        v.extend(optional.into_iter().filter_map(|(r, p)| p.as_deref().map(|p| (r, p))));
        v
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Omit wall-clock fields so reruns are byte-identical.
    pub canonical: bool,
}

/// Header embedded in every bundle document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocHeader {
    pub kind: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub header: DocHeader,
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub canonical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGroups {
    pub gender_phrase: String,
    pub gender: Vec<u32>,
    pub ethnicity_phrase: String,
    pub ethnicity: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntropy {
    pub gender: f64,
    pub ethnicity: f64,
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsReport {
    pub n_clusters: usize,
    /// Shares over the identity images.
    pub summaries: Vec<RegionSummary>,
    /// Per system, share of its profession images in each region.
    pub system_shares: BTreeMap<String, Vec<f64>>,
    pub groups: RegionGroups,
    pub attribute_entropy: AttributeEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignments {
    pub identity: BTreeMap<String, u32>,
    /// Non-identity images with an embedding.
    pub evaluated: BTreeMap<String, u32>,
}

impl Assignments {
    pub fn get(&self, id: &str) -> Option<u32> {
        self.identity.get(id).or_else(|| self.evaluated.get(id)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintilesReport {
    pub women: QuintileReport,
    pub black: QuintileReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkersReport {
    pub caption: MarkerStats,
    pub vqa_appearance: MarkerStats,
}

/// Everything an audit produces, as written to or read from a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditBundle {
    pub provenance: Provenance,
    pub regions: Document<RegionsReport>,
    pub assignments: Document<Assignments>,
    pub diversity: Option<Document<DiversityReport>>,
    pub quintiles: Option<Document<QuintilesReport>>,
    pub markers: Option<Document<MarkersReport>>,
}

fn read_doc<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<T>, AuditError> {
    let path = dir.join(format!("{name}.json"));
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&path).map_err(|source| AuditError::Io { path: path.clone(), source })?;
    serde_json::from_slice(&bytes).map(Some).map_err(|e| AuditError::Bundle(format!("{}: {e}", path.display())))
}

impl AuditBundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, AuditError> {
        let dir = dir.as_ref();
        let need = |name: &str| AuditError::Bundle(format!("{} is missing {name}.json", dir.display()));
        let provenance: Provenance = read_doc(dir, "provenance")?.ok_or_else(|| need("provenance"))?;
        if let Some(stage) = &provenance.failed_stage {
            return Err(AuditError::Bundle(format!("bundle is partial: stage {stage} failed")));
        }
        Ok(AuditBundle {
            regions: read_doc(dir, "regions")?.ok_or_else(|| need("regions"))?,
            assignments: read_doc(dir, "assignments")?.ok_or_else(|| need("assignments"))?,
            diversity: read_doc(dir, "diversity")?,
            quintiles: read_doc(dir, "quintiles")?,
            markers: read_doc(dir, "markers")?,
            provenance,
        })
    }
}

struct Run<'a> {
    out: &'a Path,
    provenance: Provenance,
}

impl Run<'_> {
    fn persist_provenance(&self) -> Result<(), AuditError> {
        let path = self.out.join("provenance.json");
        let bytes = serde_json::to_vec_pretty(&self.provenance).expect("provenance serializes");
        fs::write(&path, bytes).map_err(|source| AuditError::Io { path, source })
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T, String>) -> Result<T, AuditError> {
        match f() {
            Ok(v) => {
                self.provenance.stages.push(StageRecord { name: name.into(), status: StageStatus::Ok, detail: None });
                Ok(v)
            }
            Err(message) => {
                self.provenance.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    detail: Some(message.clone()),
                });
                self.provenance.failed_stage = Some(name.into());
                self.persist_provenance()?;
                Err(AuditError::Stage { stage: name, message })
            }
        }
    }

    fn skip(&mut self, name: &'static str) {
        self.provenance.stages.push(StageRecord { name: name.into(), status: StageStatus::Skipped, detail: None });
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), AuditError> {
        let path = self.out.join(name);
        self.provenance.outputs.push(FileDigest { name: name.into(), sha256: sha256_hex(&bytes) });
        fs::write(&path, bytes).map_err(|source| AuditError::Io { path, source })
    }
}

fn markdown_with_header(header: &DocHeader, title: &str, body: String) -> Vec<u8> {
    let seeds: Vec<String> = header.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("<!-- config sha256 {} | seeds {} -->\n\n## {title}\n\n{body}", header.config_hash, seeds.join(" ")).into_bytes()
}

struct Loaded {
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    bls: Option<corpus::BlsTable>,
    annotations: Option<Vec<Annotation>>,
    model: Option<ClusterModel>,
}

/// Groups cluster assignments of profession images by system, then profession.
pub fn profession_assignments(corpus: &Corpus, evaluated: &BTreeMap<String, u32>) -> ProfessionAssignments {
    let mut out = ProfessionAssignments::new();
    for r in corpus.of_kind(PromptKind::Profession) {
        if let (Some(p), Some(&c)) = (r.prompt.profession_name(), evaluated.get(&r.id)) {
            out.entry(r.system.clone()).or_default().entry(p.to_owned()).or_default().push(c);
        }
    }
    out
}

/// Runs every stage and writes the bundle into `out`.
pub fn run_audit(config: &AuditConfig, out: &Path, opts: RunOptions) -> Result<AuditBundle, AuditError> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|source| AuditError::Io { path: out.into(), source })?;
    let config_hash = config.hash();
    let seeds = config.seeds.as_map();
    let header = |kind: &str| DocHeader {
        kind: kind.into(),
        tool_version: TOOL_VERSION.into(),
        config_hash: config_hash.clone(),
        seeds: seeds.clone(),
    };
    let created_unix = (!opts.canonical).then(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    });
    let mut run = Run {
        out,
        provenance: Provenance {
            tool_version: TOOL_VERSION.into(),
            config_hash: config_hash.clone(),
            seeds: seeds.clone(),
            canonical: opts.canonical,
            created_unix,
            inputs: Vec::new(),
            stages: Vec::new(),
            outputs: Vec::new(),
            failed_stage: None,
        },
    };

    let (digests, loaded) = run.stage("load", || {
        let mut digests = Vec::new();
        for (role, p) in config.inputs() {
            let bytes = fs::read(config.resolve(p)).map_err(|e| format!("{role}: {e}"))?;
            digests.push(FileDigest { name: role.into(), sha256: sha256_hex(&bytes) });
        }
        let (corpus, _) = corpus::load_corpus(config.resolve(&config.corpus)).map_err(|e| e.to_string())?;
        let embeddings = EmbeddingMatrix::load(config.resolve(&config.embeddings)).map_err(|e| e.to_string())?;
        let bls = config.bls.as_ref().map(|p| corpus::load_bls(config.resolve(p))).transpose().map_err(|e| e.to_string())?;
        let annotations = config
            .annotations
            .as_ref()
            .map(|p| gateway::load_annotations(config.resolve(p), None))
            .transpose()
            .map_err(|e| e.to_string())?;
        let model = config
            .cluster_model
            .as_ref()
            .map(|p| ClusterModel::load(config.resolve(p)))
            .transpose()
            .map_err(|e| e.to_string())?;
        Ok((digests, Loaded { corpus, embeddings, bls, annotations, model }))
    })?;
    run.provenance.inputs = digests;
    let Loaded { corpus, embeddings, bls, annotations, model } = loaded;

    let identity_ids: Vec<&str> = corpus.of_kind(PromptKind::Identity).map(|r| r.id.as_str()).collect();
    let model = run.stage("cluster", || {
        if identity_ids.is_empty() {
            return Err("corpus has no identity images".into());
        }
        let identity = embeddings.select(&identity_ids).ok_or("an identity image has no embedding")?;
        match model {
            Some(m) => {
                if m.n_clusters != config.n_clusters {
                    return Err(format!("model has {} clusters, config asks for {}", m.n_clusters, config.n_clusters));
                }
                if m.ids != identity.ids() || m.dim != identity.dim() {
                    return Err("model was fitted on different identity embeddings".into());
                }
                Ok(m)
            }
            None => clusters::ward_cluster(&identity, config.n_clusters).map_err(|e| e.to_string()),
        }
    })?;

    let assignments = run.stage("assign", || {
        let others: Vec<&str> = corpus
            .records()
            .iter()
            .filter(|r| r.prompt.kind() != PromptKind::Identity && embeddings.ids().iter().any(|i| *i == r.id))
            .map(|r| r.id.as_str())
            .collect();
        let evaluated = if others.is_empty() {
            BTreeMap::new()
        } else {
            let m = embeddings.select(&others).expect("filtered to present ids");
            clusters::assign(&model, &m).map_err(|e| e.to_string())?.into_iter().collect()
        };
        Ok(Assignments { identity: model.assignments().into_iter().collect(), evaluated })
    })?;
    let professions = profession_assignments(&corpus, &assignments.evaluated);

    let regions = run.stage("summarize", || {
        let identity_eval = model.assignments();
        let summaries = clusters::summarize_regions(&model, &corpus, &identity_eval).map_err(|e| e.to_string())?;
        let mut system_shares = BTreeMap::new();
        for (system, per) in &professions {
            let pooled: Vec<u32> = per.values().flatten().copied().collect();
            system_shares.insert(system.clone(), clusters::cluster_shares(&pooled, model.n_clusters).map_err(|e| e.to_string())?);
        }
        let g = &config.groups;
        let pick = |attr, phrase: &str, rank| {
            metrics::select_region_group(&summaries, attr, phrase, rank)
                .map(|s| s.into_iter().collect::<Vec<u32>>())
                .map_err(|e| e.to_string())
        };
        let groups = RegionGroups {
            gender_phrase: g.gender_phrase.clone(),
            gender: pick(RegionAttribute::Gender, &g.gender_phrase, g.gender_rank_max)?,
            ethnicity_phrase: g.ethnicity_phrase.clone(),
            ethnicity: pick(RegionAttribute::Ethnicity, &g.ethnicity_phrase, g.ethnicity_rank_max)?,
        };
        let ent = |a| clusters::attribute_entropy(&model, &corpus, a).map_err(|e| e.to_string());
        let attribute_entropy = AttributeEntropy {
            gender: ent(clusters::Attribute::Gender)?,
            ethnicity: ent(clusters::Attribute::Ethnicity)?,
            joint: ent(clusters::Attribute::Joint)?,
        };
        Ok(RegionsReport { n_clusters: model.n_clusters, summaries, system_shares, groups, attribute_entropy })
    })?;

    let diversity = if config.wants(ReportKind::Diversity) {
        Some(run.stage("diversity", || {
            if professions.is_empty() {
                return Err("no profession images were assigned".into());
            }
            metrics::diversity_report(
                &professions,
                model.n_clusters,
                config.diversity_ci_level,
                config.bootstrap_b,
                config.seeds.bootstrap,
            )
            .map_err(|e| e.to_string())
        })?)
    } else {
        run.skip("diversity");
        None
    };

    let quintiles = if config.wants(ReportKind::Quintiles) {
        Some(run.stage("quintiles", || {
            let bls = bls.as_ref().expect("validated");
            let report = |key, group: &[u32]| {
                let bins = metrics::quintile_bins(bls, key).map_err(|e| e.to_string())?;
                let group: BTreeSet<u32> = group.iter().copied().collect();
                metrics::quintile_report(&professions, &group, &bins, config.ci_level, config.bootstrap_b, config.seeds.bootstrap)
                    .map_err(|e| e.to_string())
            };
            Ok(QuintilesReport {
                women: report(BlsKey::PctWomen, &regions.groups.gender)?,
                black: report(BlsKey::PctBlack, &regions.groups.ethnicity)?,
            })
        })?)
    } else {
        run.skip("quintiles");
        None
    };

    let markers = if config.wants(ReportKind::Markers) {
        Some(run.stage("markers", || {
            let annotations = annotations.as_ref().expect("validated");
            let profession_only: Vec<Annotation> = annotations
                .iter()
                .filter(|a| corpus.get(&a.image_id).is_some_and(|r| r.prompt.kind() == PromptKind::Profession))
                .cloned()
                .collect();
            if profession_only.is_empty() {
                return Err("no annotations for profession images".into());
            }
            Ok(MarkersReport {
                caption: metrics::gender_marker_stats(&profession_only, &corpus, TextSource::Caption),
                vqa_appearance: metrics::gender_marker_stats(&profession_only, &corpus, TextSource::VqaAppearance),
            })
        })?)
    } else {
        run.skip("markers");
        None
    };

    let regions = Document { header: header("regions"), body: regions };
    let assignments = Document { header: header("assignments"), body: assignments };
    let diversity = diversity.map(|body| Document { header: header("diversity"), body });
    let quintiles = quintiles.map(|body| Document { header: header("quintiles"), body });
    let markers = markers.map(|body| Document { header: header("markers"), body });

    let write_result = (|| -> Result<(), AuditError> {
        run.write("regions.json", to_json(&regions))?;
        run.write(
            "regions.md",
            markdown_with_header(&regions.header, "Regions", metrics::regions_markdown(&regions.body.summaries, 2, 4)),
        )?;
        run.write("assignments.json", to_json(&assignments))?;
        if let Some(d) = &diversity {
            run.write("diversity.json", to_json(d))?;
            run.write("diversity.md", markdown_with_header(&d.header, "Diversity", metrics::diversity_markdown(&d.body)))?;
        }
        if let Some(q) = &quintiles {
            run.write("quintiles.json", to_json(q))?;
            let body = format!(
                "{}\n{}",
                metrics::quintiles_markdown(&q.body.women),
                metrics::quintiles_markdown(&q.body.black)
            );
            run.write("quintiles.md", markdown_with_header(&q.header, "Quintiles", body))?;
        }
        if let Some(m) = &markers {
            run.write("markers.json", to_json(m))?;
            let body = metrics::markers_markdown(&[m.body.caption.clone(), m.body.vqa_appearance.clone()]);
            run.write("markers.md", markdown_with_header(&m.header, "Gender markers", body))?;
        }
        Ok(())
    })();
    match write_result {
        Ok(()) => run.provenance.stages.push(StageRecord { name: "write".into(), status: StageStatus::Ok, detail: None }),
        Err(e) => {
            run.provenance.stages.push(StageRecord {
                name: "write".into(),
                status: StageStatus::Failed,
                detail: Some(e.to_string()),
            });
            run.provenance.failed_stage = Some("write".into());
            let _ = run.persist_provenance();
            return Err(AuditError::Stage { stage: "write", message: e.to_string() });
        }
    }
    run.persist_provenance()?;
    Ok(AuditBundle { provenance: run.provenance, regions, assignments, diversity, quintiles, markers })
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}
