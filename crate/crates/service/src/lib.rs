//! Read-only HTTP API over an audit bundle, its corpus and the
//! visual-word similarity index.
//!
//! | route | response |
//! |---|---|
//! | `GET /images/{id}` | image bytes |
//! | `GET /images?system=&profession=&gender=&ethnicity=&limit=&offset=` | [`ImagePage`] |
//! | `GET /knn?id=&by=bovw\|colorfulness&k=` | `[`[`Neighbor`]`]` |
//! | `GET /clusters` | region summaries |
//! | `GET /clusters/{i}/examples?limit=&offset=` | [`ClusterExamples`] |
//! | `GET /systems`, `GET /professions` | name lists |
//! | `GET /professions/{name}/distribution?system=` | [`ProfessionDistribution`] |
//! | `GET /compare?systems=a,b&profession=&limit=&offset=` | [`Comparison`] |
//! | `GET /reports/{regions\|diversity\|quintiles\|markers\|provenance}` | bundle document |
//!
//! Unknown ids give 404 and malformed queries 400, both with an
//! [`ErrorBody`].

mod error;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tti_audit::ann::{self, AnnError, Probe};
use tti_audit::clusters::{self, RegionSummary};
use tti_audit::corpus::{Gender, ImageFilter, PromptKind};

pub use error::{ApiError, ErrorBody, ErrorDetail};
pub use state::{ServiceConfig, ServiceState, StateError};

pub const DEFAULT_PAGE: usize = 60;
pub const MAX_PAGE: usize = 1000;
pub const DEFAULT_K: usize = 12;
pub const MAX_K: usize = 200;

type Shared = Arc<ServiceState>;
type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExamples {
    pub cluster: u32,
    pub page: ImagePage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemShares {
    pub n: usize,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfessionDistribution {
    pub profession: String,
    pub n_clusters: usize,
    pub systems: BTreeMap<String, SystemShares>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemImages {
    pub system: String,
    pub page: ImagePage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub profession: String,
    pub systems: Vec<SystemImages>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid CORS origin {0:?}")]
    Origin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn query<T: DeserializeOwned>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn bounded(name: &str, value: Option<usize>, default: usize, max: usize) -> ApiResult<usize> {
    match value.unwrap_or(default) {
        0 => Err(ApiError::BadRequest(format!("{name} must be at least 1"))),
        v if v > max => Err(ApiError::BadRequest(format!("{name} must be at most {max}"))),
        v => Ok(v),
    }
}

fn page<'a>(ids: impl Iterator<Item = &'a str>, offset: Option<usize>, limit: Option<usize>) -> ApiResult<ImagePage> {
    let limit = bounded("limit", limit, DEFAULT_PAGE, MAX_PAGE)?;
    let offset = offset.unwrap_or(0);
    let all: Vec<&str> = ids.collect();
    let ids = all.iter().skip(offset).take(limit).map(|s| s.to_string()).collect();
    Ok(ImagePage { total: all.len(), offset, limit, ids })
}

impl ServiceState {
    fn require_system(&self, system: &str) -> ApiResult<()> {
        if self.corpus.systems().contains(&system) {
            Ok(())
        } else {
            Err(error::not_found("system", system))
        }
    }

    fn require_profession(&self, profession: &str) -> ApiResult<()> {
        if self.corpus.records().iter().any(|r| r.prompt.profession_name() == Some(profession)) {
            Ok(())
        } else {
            Err(error::not_found("profession", profession))
        }
    }

    fn professions_list(&self) -> Vec<&str> {
        let names: BTreeSet<&str> = self.corpus.records().iter().filter_map(|r| r.prompt.profession_name()).collect();
        names.into_iter().collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImagesQuery {
    system: Option<String>,
    profession: Option<String>,
    gender: Option<String>,
    ethnicity: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_images(State(s): State<Shared>, q: Result<Query<ImagesQuery>, QueryRejection>) -> ApiResult<Json<ImagePage>> {
    let q = query(q)?;
    let gender = q
        .gender
        .as_deref()
        .map(|g| Gender::parse(g).ok_or_else(|| ApiError::BadRequest(format!("unknown gender {g:?}"))))
        .transpose()?;
    let filter = ImageFilter { system: q.system, profession: q.profession, gender, ethnicity: q.ethnicity };
    Ok(Json(page(s.corpus.filter(&filter).map(|r| r.id.as_str()), q.offset, q.limit)?))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image_bytes(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let record = s.corpus.get(&id).ok_or_else(|| error::not_found("image", &id))?;
    let path = s.corpus.resolve_file(record);
    let file = tokio::fs::File::open(&path)
        .await
        .map_err(|e| ApiError::NotFound(format!("image {id:?} has no readable file: {e}")))?;
    let body = Body::from_stream(tokio_util::io::ReaderStream::new(file));
    Ok(([(header::CONTENT_TYPE, content_type(&path))], body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnQuery {
    id: Option<String>,
    by: Option<String>,
    k: Option<usize>,
}

/// Neighbors of `id` by visual-word cosine or by colorfulness distance.
pub fn neighbors(s: &ServiceState, id: &str, by: &str, k: usize) -> ApiResult<Vec<Neighbor>> {
    let found = match by {
        "bovw" => ann::query(&s.graph, &s.vectors, Probe::Id(id), k),
        "colorfulness" => ann::colorfulness_neighbors(&s.colorfulness, id, k),
        other => return Err(ApiError::BadRequest(format!("by must be bovw or colorfulness, not {other:?}"))),
    };
    match found {
        Ok(v) => Ok(v.into_iter().map(|(id, score)| Neighbor { id, score }).collect()),
        Err(AnnError::UnknownId(_)) if s.corpus.get(id).is_some() => {
            Err(ApiError::NotFound(format!("image {id:?} is not in the {by} index")))
        }
        Err(AnnError::UnknownId(_)) => Err(error::not_found("image", id)),
        Err(e @ (AnnError::KTooLarge { .. } | AnnError::InvalidParameter(_))) => Err(ApiError::BadRequest(e.to_string())),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

async fn knn(State(s): State<Shared>, q: Result<Query<KnnQuery>, QueryRejection>) -> ApiResult<Json<Vec<Neighbor>>> {
    let q = query(q)?;
    let id = q.id.ok_or_else(|| ApiError::BadRequest("id is required".into()))?;
    let k = bounded("k", q.k, DEFAULT_K, MAX_K)?;
    Ok(Json(neighbors(&s, &id, q.by.as_deref().unwrap_or("bovw"), k)?))
}

async fn list_clusters(State(s): State<Shared>) -> Json<Vec<RegionSummary>> {
    Json(s.bundle.regions.body.summaries.clone())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PageQuery {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn cluster_examples(
    State(s): State<Shared>,
    Path(i): Path<String>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<Json<ClusterExamples>> {
    let q = query(q)?;
    let cluster: u32 = i.parse().map_err(|_| ApiError::BadRequest(format!("cluster index {i:?} is not a number")))?;
    if cluster as usize >= s.n_clusters() {
        return Err(error::not_found("cluster", &i));
    }
    Ok(Json(ClusterExamples { cluster, page: page(s.cluster_members(cluster), q.offset, q.limit)? }))
}

async fn systems(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.corpus.systems().into_iter().map(String::from).collect())
}

async fn professions(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.professions_list().into_iter().map(String::from).collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionQuery {
    system: Option<String>,
}

/// Per-system cluster shares of one profession's images.
pub fn profession_distribution(s: &ServiceState, profession: &str, system: Option<&str>) -> ApiResult<ProfessionDistribution> {
    s.require_profession(profession)?;
    if let Some(sys) = system {
        s.require_system(sys)?;
    }
    let mut systems = BTreeMap::new();
    for (sys, labels) in s.profession_labels(profession) {
        if system.is_some_and(|want| want != sys) {
            continue;
        }
        let shares = clusters::cluster_shares(labels, s.n_clusters()).map_err(|e| ApiError::Internal(e.to_string()))?;
        systems.insert(sys.to_owned(), SystemShares { n: labels.len(), shares });
    }
    Ok(ProfessionDistribution { profession: profession.to_owned(), n_clusters: s.n_clusters(), systems })
}

async fn distribution(
    State(s): State<Shared>,
    Path(name): Path<String>,
    q: Result<Query<DistributionQuery>, QueryRejection>,
) -> ApiResult<Json<ProfessionDistribution>> {
    let q = query(q)?;
    Ok(Json(profession_distribution(&s, &name, q.system.as_deref())?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareQuery {
    systems: Option<String>,
    profession: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn compare(State(s): State<Shared>, q: Result<Query<CompareQuery>, QueryRejection>) -> ApiResult<Json<Comparison>> {
    let q = query(q)?;
    let raw = q.systems.ok_or_else(|| ApiError::BadRequest("systems is required".into()))?;
    let profession = q.profession.ok_or_else(|| ApiError::BadRequest("profession is required".into()))?;
    let names: Vec<&str> = raw.split(',').map(str::trim).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(ApiError::BadRequest(format!("malformed systems list {raw:?}")));
    }
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(ApiError::BadRequest(format!("systems list {raw:?} repeats a system")));
    }
    s.require_profession(&profession)?;
    let mut systems = Vec::with_capacity(names.len());
    for name in names {
        s.require_system(name)?;
        let filter = ImageFilter { system: Some(name.into()), profession: Some(profession.clone()), ..Default::default() };
        let ids = s.corpus.filter(&filter).filter(|r| r.prompt.kind() == PromptKind::Profession).map(|r| r.id.as_str());
        systems.push(SystemImages { system: name.to_owned(), page: page(ids, q.offset, q.limit)? });
    }
    Ok(Json(Comparison { profession, systems }))
}

async fn report(State(s): State<Shared>, Path(kind): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let b = &s.bundle;
    let missing = || ApiError::NotFound(format!("bundle has no {kind} report"));
    let json = |v: serde_json::Result<serde_json::Value>| v.map_err(|e| ApiError::Internal(e.to_string()));
    let doc = match kind.as_str() {
        "regions" => json(serde_json::to_value(&b.regions))?,
        "provenance" => json(serde_json::to_value(&b.provenance))?,
        "diversity" => json(serde_json::to_value(b.diversity.as_ref().ok_or_else(missing)?))?,
        "quintiles" => json(serde_json::to_value(b.quintiles.as_ref().ok_or_else(missing)?))?,
        "markers" => json(serde_json::to_value(b.markers.as_ref().ok_or_else(missing)?))?,
        _ => return Err(error::not_found("report", &kind)),
    };
    Ok(Json(doc))
}

async fn fallback() -> ApiError {
    ApiError::NotFound("no such route".into())
}

/// All routes, with CORS allowing `cors_origin` when given.
pub fn router(state: Arc<ServiceState>, cors_origin: Option<HeaderValue>) -> Router {
    let app = Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}", get(image_bytes))
        .route("/knn", get(knn))
        .route("/clusters", get(list_clusters))
        .route("/clusters/{i}/examples", get(cluster_examples))
        .route("/systems", get(systems))
        .route("/professions", get(professions))
        .route("/professions/{name}/distribution", get(distribution))
        .route("/compare", get(compare))
        .route("/reports/{kind}", get(report))
        .fallback(fallback)
        .with_state(state);
    match cors_origin {
        Some(origin) => app.layer(
            CorsLayer::new().allow_origin(AllowOrigin::exact(origin)).allow_methods([Method::GET]),
        ),
        None => app,
    }
}

pub fn parse_origin(origin: &str) -> Result<HeaderValue, ServeError> {
    HeaderValue::from_str(origin).map_err(|_| ServeError::Origin(origin.to_owned()))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr, cors_origin: Option<HeaderValue>) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    axum::serve(listener, router(Arc::new(state), cors_origin)).await?;
    Ok(())
}
