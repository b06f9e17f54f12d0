//! Boundary to the external captioning, VQA and embedding models.
//!
//! Models are reached over HTTP (`POST /caption`, `/vqa`, `/embed`) or their
//! outputs are ingested from files. Constrained VQA answers are post-filtered
//! here: anything outside the configured vocabulary becomes [`UNRESOLVED`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ImageRecord};
use crate::embedding::{normalize_row, EmbeddingError, EmbeddingMatrix};
use crate::vocab;

/// Replacement for constrained answers that fall outside the vocabulary.
pub const UNRESOLVED: &str = "UNRESOLVED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKey {
    Appearance,
    Gender,
    Ethnicity,
}

impl QuestionKey {
    pub const ALL: [QuestionKey; 3] = [QuestionKey::Appearance, QuestionKey::Gender, QuestionKey::Ethnicity];

    pub fn question(self) -> &'static str {
        match self {
            QuestionKey::Appearance => "What word best describes this person's appearance?",
            QuestionKey::Gender => "What word best describes this person's gender?",
            QuestionKey::Ethnicity => "What word best describes this person's ethnicity?",
        }
    }

    pub fn parse(s: &str) -> Option<QuestionKey> {
        match s {
            "appearance" => Some(QuestionKey::Appearance),
            "gender" => Some(QuestionKey::Gender),
            "ethnicity" => Some(QuestionKey::Ethnicity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuestionKey::Appearance => "appearance",
            QuestionKey::Gender => "gender",
            QuestionKey::Ethnicity => "ethnicity",
        }
    }

    /// Label set used when this question is constrained.
    pub fn default_vocabulary(self) -> Option<Vec<String>> {
        let words: &[&str] = match self {
            QuestionKey::Appearance => return None,
            QuestionKey::Gender => &vocab::VQA_GENDERS,
            QuestionKey::Ethnicity => &vocab::VQA_ETHNICITIES,
        };
        Some(words.iter().map(|w| (*w).to_owned()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Remote,
    #[default]
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub caption: String,
    pub vqa: BTreeMap<QuestionKey, String>,
    #[serde(skip)]
    pub source: AnnotationSource,
}

/// Allowed answers per constrained question.
pub type Constraints = BTreeMap<QuestionKey, Vec<String>>;

/// Constraints for the given questions using the default label sets.
pub fn default_constraints(keys: &[QuestionKey]) -> Constraints {
    keys.iter()
        .filter_map(|k| k.default_vocabulary().map(|v| (*k, v)))
        .collect()
}

/// Maps an answer outside `allowed` to [`UNRESOLVED`]. Matching is exact.
pub fn filter_answer(answer: &str, allowed: &[String]) -> String {
    if allowed.iter().any(|a| a == answer) {
        answer.to_owned()
    } else {
        UNRESOLVED.to_owned()
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network trouble or a 5xx status; worth retrying.
    #[error("transient: {0}")]
    Transient(String),
    /// 4xx status: the request itself is wrong.
    #[error("{endpoint} rejected the request with HTTP {status}: {body}")]
    Rejected { endpoint: String, status: u16, body: String },
    #[error("malformed response from {endpoint}: {message}")]
    Malformed { endpoint: String, message: String },
}

/// Anything that can answer the three inference calls.
pub trait InferenceBackend: Sync {
    fn caption(&self, image: &[u8]) -> Result<String, BackendError>;
    fn vqa(&self, image: &[u8], question: &str, allowed: Option<&[String]>) -> Result<String, BackendError>;
    fn embed(&self, image: &[u8], question: &str) -> Result<Vec<f32>, BackendError>;
}

/// JSON-over-HTTP backend.
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ImageBody<'a> {
    image: &'a str,
}

#[derive(Serialize)]
struct VqaBody<'a> {
    image: &'a str,
    question: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    allowed: Option<&'a [String]>,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    image: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Deserialize)]
struct AnswerReply {
    answer: String,
}

#[derive(Deserialize)]
struct VectorReply {
    vector: Vec<f32>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend { base: endpoint.trim_end_matches('/').to_owned(), agent }
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(&self, route: &str, body: &B) -> Result<T, BackendError> {
        let url = format!("{}{route}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        if (400..500).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Rejected { endpoint: url, status, body });
        }
        if status >= 500 {
            return Err(BackendError::Transient(format!("{url}: HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| BackendError::Malformed { endpoint: url, message: e.to_string() })
    }
}

fn b64(image: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(image)
}

impl InferenceBackend for HttpBackend {
    fn caption(&self, image: &[u8]) -> Result<String, BackendError> {
        let image = b64(image);
        self.post::<_, TextReply>("/caption", &ImageBody { image: &image }).map(|r| r.text)
    }

    fn vqa(&self, image: &[u8], question: &str, allowed: Option<&[String]>) -> Result<String, BackendError> {
        let image = b64(image);
        self.post::<_, AnswerReply>("/vqa", &VqaBody { image: &image, question, allowed })
            .map(|r| r.answer)
    }

    fn embed(&self, image: &[u8], question: &str) -> Result<Vec<f32>, BackendError> {
        let image = b64(image);
        self.post::<_, VectorReply>("/embed", &EmbedBody { image: &image, question })
            .map(|r| r.vector)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut delay = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Err(BackendError::Transient(_)) if attempt < self.attempts => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FetchOptions {
    pub retry: RetryPolicy,
    /// Maximum number of images in flight.
    pub parallelism: usize,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions { retry: RetryPolicy::default(), parallelism: 8 }
    }
}

/// An image that could not be annotated after retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationBatch {
    pub annotations: Vec<Annotation>,
    pub failures: Vec<ImageFailure>,
}

impl AnnotationBatch {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Rejected(BackendError),
    #[error("image {image_id}: {message}")]
    Image { image_id: String, message: String },
    #[error("embedding dimension mismatch: {image_id} has {got}, expected {expected}")]
    DimensionMismatch { image_id: String, expected: usize, got: usize },
    #[error("degenerate embedding for {0}")]
    Degenerate(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("annotations file line {line}: {message}")]
    AnnotationLine { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Runs `job` over `0..n` with at most `width` workers, returning results in
/// index order. A job returning `Err` with `abort = true` stops new work.
fn run_ordered<T: Send, E: Send>(
    n: usize,
    width: usize,
    job: impl Fn(usize) -> Result<T, (E, bool)> + Sync,
) -> Result<Vec<T>, E> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let fatal: Mutex<Option<(usize, E)>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..width.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                match job(i) {
                    Ok(v) => *slots[i].lock().unwrap() = Some(v),
                    Err((e, _abort)) => {
                        stop.store(true, Ordering::Relaxed);
                        let mut f = fatal.lock().unwrap();
                        // keep the earliest failing index so the error is stable
                        if f.as_ref().is_none_or(|(j, _)| i < *j) {
                            *f = Some((i, e));
                        }
                    }
                }
            });
        }
    });
    if let Some((_, e)) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots.into_iter().map(|s| s.into_inner().unwrap().expect("every index ran")).collect())
}

fn read_image(corpus: &Corpus, record: &ImageRecord) -> Result<Vec<u8>, String> {
    let path = corpus.resolve_file(record);
    fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

enum Outcome {
    Done(Annotation),
    Failed(ImageFailure),
}

/// Captions every image and asks each question, in corpus order. Per-image
/// failures are collected; a 4xx response aborts the whole batch.
pub fn fetch_annotations(
    corpus: &Corpus,
    backend: &dyn InferenceBackend,
    questions: &[QuestionKey],
    constraints: &Constraints,
    opts: &FetchOptions,
) -> Result<AnnotationBatch, GatewayError> {
    let records = corpus.records();
    let outcomes = run_ordered(records.len(), opts.parallelism, |i| {
        let record = &records[i];
        let fail = |message: String| Ok(Outcome::Failed(ImageFailure { image_id: record.id.clone(), message }));
        let image = match read_image(corpus, record) {
            Ok(b) => b,
            Err(m) => return fail(m),
        };
        let escalate = |e: BackendError| match e {
            e @ BackendError::Rejected { .. } => Err((GatewayError::Rejected(e), true)),
            other => fail(other.to_string()),
        };
        let caption = match opts.retry.run(|| backend.caption(&image)) {
            Ok(c) => c,
            Err(e) => return escalate(e),
        };
        let mut vqa = BTreeMap::new();
        for &q in questions {
            let allowed = constraints.get(&q).map(Vec::as_slice);
            let answer = match opts.retry.run(|| backend.vqa(&image, q.question(), allowed)) {
                Ok(a) => a,
                Err(e) => return escalate(e),
            };
            let answer = match allowed {
                Some(words) => filter_answer(answer.trim(), words),
                None => answer,
            };
            vqa.insert(q, answer);
        }
        Ok(Outcome::Done(Annotation {
            image_id: record.id.clone(),
            caption,
            vqa,
            source: AnnotationSource::Remote,
        }))
    })?;
    let mut batch = AnnotationBatch::default();
    for o in outcomes {
        match o {
            Outcome::Done(a) => batch.annotations.push(a),
            Outcome::Failed(f) => batch.failures.push(f),
        }
    }
    Ok(batch)
}

/// Embeds every image conditioned on `question`; rows are L2-normalized
/// here whatever the server returns. Any failure aborts.
pub fn fetch_embeddings(
    corpus: &Corpus,
    backend: &dyn InferenceBackend,
    question: QuestionKey,
    opts: &FetchOptions,
) -> Result<EmbeddingMatrix, GatewayError> {
    let records = corpus.records();
    let rows = run_ordered(records.len(), opts.parallelism, |i| {
        let record = &records[i];
        let image_err = |message: String| (GatewayError::Image { image_id: record.id.clone(), message }, true);
        let image = read_image(corpus, record).map_err(image_err)?;
        let vector = opts.retry.run(|| backend.embed(&image, question.question())).map_err(|e| match e {
            e @ BackendError::Rejected { .. } => (GatewayError::Rejected(e), true),
            other => image_err(other.to_string()),
        })?;
        Ok((record.id.clone(), vector))
    })?;
    let expected = rows.first().map_or(0, |(_, v)| v.len());
    let mut normalized = Vec::with_capacity(rows.len());
    for (id, v) in rows {
        if v.len() != expected {
            return Err(GatewayError::DimensionMismatch { image_id: id, expected, got: v.len() });
        }
        let unit = normalize_row(&v).ok_or_else(|| GatewayError::Degenerate(id.clone()))?;
        normalized.push((id, unit));
    }
    Ok(EmbeddingMatrix::from_rows(normalized)?)
}

/// Parses line-delimited annotations. When `constraints` is given, every
/// constrained answer must be in vocabulary or [`UNRESOLVED`].
pub fn parse_annotations<R: BufRead>(reader: R, constraints: Option<&Constraints>) -> Result<Vec<Annotation>, GatewayError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let bad = |message: String| GatewayError::AnnotationLine { line: lineno, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if !seen.insert(ann.image_id.clone()) {
            return Err(bad(format!("duplicate image_id {:?}", ann.image_id)));
        }
        if let Some(c) = constraints {
            for (key, allowed) in c {
                if let Some(answer) = ann.vqa.get(key) {
                    if answer != UNRESOLVED && !allowed.contains(answer) {
                        return Err(bad(format!("{} answer {answer:?} outside vocabulary", key.name())));
                    }
                }
            }
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>, constraints: Option<&Constraints>) -> Result<Vec<Annotation>, GatewayError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| GatewayError::Io { path: path.into(), source })?;
    parse_annotations(BufReader::new(file), constraints)
}

pub fn write_annotations<W: Write>(mut w: W, annotations: &[Annotation]) -> std::io::Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
