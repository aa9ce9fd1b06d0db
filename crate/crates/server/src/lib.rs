//! Read-only HTTP API over a derived store.

pub mod range;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use mindmap_core::config::{ConfigError, PipelineConfig, ServerSettings};
use mindmap_core::corpus::Recording;
use mindmap_core::illustrator::ImageAsset;
use mindmap_core::search::DEFAULT_TOP_K;
use mindmap_core::store::{StoreError, StoreSnapshot};
use range::{parse_range, RangeOutcome};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::SeekFrom;
use std::path::Path;
use std::sync::Arc;
use tokio::io::{AsyncReadExt, AsyncSeekExt};
use tokio_util::io::ReaderStream;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

const MAX_TOP_K: usize = 1000;
const AUDIO_CHUNK: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

/// Shared handler state. `None` means no store could be loaded and every
/// data endpoint answers 503.
#[derive(Clone, Default)]
pub struct AppState {
    snapshot: Option<Arc<StoreSnapshot>>,
}

impl AppState {
    pub fn new(snapshot: StoreSnapshot) -> Self {
        Self {
            snapshot: Some(Arc::new(snapshot)),
        }
    }

    pub fn unloaded() -> Self {
        Self::default()
    }

    pub fn load(cfg: &PipelineConfig) -> Result<Self, StoreError> {
        let prep = cfg.preprocessor().map_err(|e| StoreError::Malformed {
            path: cfg.derived_root.clone(),
            message: e.to_string(),
        })?;
        StoreSnapshot::load(&cfg.derived_root, &cfg.corpus_root, prep).map(Self::new)
    }

    fn store(&self) -> Result<&StoreSnapshot, ApiError> {
        self.snapshot.as_deref().ok_or(ApiError::Unavailable)
    }
}

#[derive(Debug)]
enum ApiError {
    Unavailable,
    BadRequest(String),
    NotFound(String),
    Io(std::io::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, "derived store not loaded".to_string()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Io(e) => {
                log::error!("io error: {e}");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal error".to_string())
            }
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState, settings: &ServerSettings) -> Router {
    let api = Router::new()
        .route("/api/categories", get(categories))
        .route("/api/mindmap", get(mindmap))
        .route("/api/recordings", get(recordings))
        .route("/api/recordings/{id}", get(recording))
        .route("/api/recordings/{id}/audio", get(audio))
        .route("/api/search", get(search))
        .route("/api/illustrations/{file}", get(illustration))
        .with_state(state)
        .layer(cors(&settings.cors_origins));
    match &settings.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api,
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new().allow_origin(allow).allow_methods([axum::http::Method::GET])
}

/// Loads the store named by `cfg` and serves until interrupted. A missing or
/// unreadable store still starts the server so clients see 503.
pub async fn serve(cfg: &PipelineConfig) -> Result<(), ServerError> {
    cfg.preprocessor()?;
    let state = match AppState::load(cfg) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("store not loaded: {e}");
            AppState::unloaded()
        }
    };
    let app = router(state, &cfg.server);
    let listener = tokio::net::TcpListener::bind(&cfg.server.bind)
        .await
        .map_err(|source| ServerError::Bind {
            addr: cfg.server.bind.clone(),
            source,
        })?;
    log::info!("listening on http://{}", cfg.server.bind);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServerError::Serve)
}

pub fn image_url(asset: &ImageAsset) -> String {
    let v: String = asset.digest.chars().take(16).collect();
    format!("/api/illustrations/{}?v={v}", asset.file)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CategorySummary {
    pub name: String,
    pub count: usize,
    pub image_url: Option<String>,
}

async fn categories(State(state): State<AppState>) -> ApiResult<Json<Vec<CategorySummary>>> {
    let store = state.store()?;
    let mut out: Vec<CategorySummary> = store
        .categories
        .iter()
        .map(|c| CategorySummary {
            name: c.name.clone(),
            count: c.member_ids.len(),
            image_url: store.category_image(&c.name).map(image_url),
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HubNode {
    pub id: String,
    pub label: String,
    pub image_url: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphNode {
    pub recording_id: String,
    pub title: String,
    pub speaker: String,
    pub topic: Option<String>,
    pub image_url: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Cluster {
    pub category: String,
    pub image_url: Option<String>,
    pub hub: HubNode,
    pub nodes: Vec<GraphNode>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MindMapGraph {
    pub clusters: Vec<Cluster>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct MindMapQuery {
    categories: Option<String>,
}

/// Comma-separated names, trimmed, empties dropped, first occurrence kept.
fn split_names(raw: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && seen.insert(*s))
        .map(str::to_string)
        .collect()
}

fn topic_of(store: &StoreSnapshot, id: &str) -> Option<String> {
    store.topics.get(id).map(|t| t.topic.clone())
}

async fn mindmap(State(state): State<AppState>, Query(q): Query<MindMapQuery>) -> ApiResult<Json<MindMapGraph>> {
    let store = state.store()?;
    let names = split_names(q.categories.as_deref().unwrap_or(""));
    if names.is_empty() {
        return Err(ApiError::BadRequest("categories parameter is required".into()));
    }
    let mut graph = MindMapGraph {
        clusters: Vec::new(),
        warnings: Vec::new(),
    };
    for name in names {
        let Some(cat) = store.categories.iter().find(|c| c.name == name) else {
            graph.warnings.push(format!("unknown category: {name}"));
            continue;
        };
        let cat_image = store.category_image(&cat.name).map(image_url);
        let nodes = cat
            .member_ids
            .iter()
            .filter_map(|id| store.recordings.get(id))
            .map(|r| GraphNode {
                recording_id: r.id.clone(),
                title: r.title.clone(),
                speaker: r.speaker.clone(),
                topic: topic_of(store, &r.id),
                image_url: store.recording_image(&r.id).map(image_url),
            })
            .collect();
        graph.clusters.push(Cluster {
            category: cat.name.clone(),
            image_url: cat_image.clone(),
            hub: HubNode {
                id: format!("category:{}", cat.name),
                label: cat.name.clone(),
                image_url: cat_image,
            },
            nodes,
        });
    }
    Ok(Json(graph))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecordingSummary {
    pub id: String,
    pub title: String,
    pub speaker: String,
    pub topic: Option<String>,
    pub category: Option<String>,
    pub image_url: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecordingDetail {
    pub id: String,
    pub title: String,
    pub speaker: String,
    pub topic: Option<String>,
    pub category: Option<String>,
    pub transcript: String,
    pub duration_s: f64,
    pub audio_available: bool,
    pub image_url: Option<String>,
}

fn has_audio(r: &Recording) -> bool {
    r.audio_path.as_deref().is_some_and(Path::is_file)
}

async fn recordings(State(state): State<AppState>) -> ApiResult<Json<Vec<RecordingSummary>>> {
    let store = state.store()?;
    Ok(Json(
        store
            .recordings
            .values()
            .map(|r| RecordingSummary {
                id: r.id.clone(),
                title: r.title.clone(),
                speaker: r.speaker.clone(),
                topic: topic_of(store, &r.id),
                category: store.category_of(&r.id).map(str::to_string),
                image_url: store.recording_image(&r.id).map(image_url),
            })
            .collect(),
    ))
}

async fn recording(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RecordingDetail>> {
    let store = state.store()?;
    let r = store
        .recordings
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown recording: {id}")))?;
    Ok(Json(RecordingDetail {
        id: r.id.clone(),
        title: r.title.clone(),
        speaker: r.speaker.clone(),
        topic: topic_of(store, &r.id),
        category: store.category_of(&r.id).map(str::to_string),
        transcript: r.raw_transcript.clone(),
        duration_s: r.duration_s,
        audio_available: has_audio(r),
        image_url: store.recording_image(&r.id).map(image_url),
    }))
}

pub fn audio_content_type(path: &Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "wav" => "audio/wav",
        "mp3" => "audio/mpeg",
        "flac" => "audio/flac",
        "ogg" | "oga" => "audio/ogg",
        "opus" => "audio/opus",
        "m4a" | "mp4" => "audio/mp4",
        "sph" => "audio/x-sphere",
        _ => "application/octet-stream",
    }
}

async fn audio(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let store = state.store()?;
    let r = store
        .recordings
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown recording: {id}")))?;
    let path = r
        .audio_path
        .as_deref()
        .filter(|p| p.is_file())
        .ok_or_else(|| ApiError::NotFound(format!("no audio for {id}")))?;
    let mut file = tokio::fs::File::open(path).await.map_err(ApiError::Io)?;
    let len = file.metadata().await.map_err(ApiError::Io)?.len();
    let range_header = headers.get(header::RANGE).and_then(|v| v.to_str().ok());

    let builder = Response::builder()
        .header(header::CONTENT_TYPE, audio_content_type(path))
        .header(header::ACCEPT_RANGES, "bytes");
    let response = match parse_range(range_header, len) {
        RangeOutcome::Full => builder
            .status(StatusCode::OK)
            .header(header::CONTENT_LENGTH, len)
            .body(Body::from_stream(ReaderStream::with_capacity(file, AUDIO_CHUNK))),
        RangeOutcome::Partial { start, end } => {
            file.seek(SeekFrom::Start(start)).await.map_err(ApiError::Io)?;
            let count = end - start + 1;
            builder
                .status(StatusCode::PARTIAL_CONTENT)
                .header(header::CONTENT_LENGTH, count)
                .header(header::CONTENT_RANGE, format!("bytes {start}-{end}/{len}"))
                .body(Body::from_stream(ReaderStream::with_capacity(file.take(count), AUDIO_CHUNK)))
        }
        RangeOutcome::Unsatisfiable => builder
            .status(StatusCode::RANGE_NOT_SATISFIABLE)
            .header(header::CONTENT_RANGE, format!("bytes */{len}"))
            .body(Body::empty()),
    };
    Ok(response.expect("static headers are valid"))
}

#[derive(Deserialize)]
struct SearchQuery {
    q: Option<String>,
    categories: Option<String>,
    k: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchResult {
    pub recording_id: String,
    pub score: f64,
    pub category: String,
    pub matched_terms: Vec<String>,
    pub title: String,
    pub speaker: String,
    pub topic: Option<String>,
    pub image_url: Option<String>,
}

async fn search(State(state): State<AppState>, Query(q): Query<SearchQuery>) -> ApiResult<Json<Vec<SearchResult>>> {
    let store = state.store()?;
    let query = q.q.ok_or_else(|| ApiError::BadRequest("q parameter is required".into()))?;
    let k = match q.k.as_deref() {
        None => DEFAULT_TOP_K,
        Some(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=MAX_TOP_K).contains(k))
            .ok_or_else(|| ApiError::BadRequest(format!("k must be an integer in 1..={MAX_TOP_K}")))?,
    };
    let names = split_names(q.categories.as_deref().unwrap_or(""));
    let hits = store.index.search(&store.prep, &query, &names, k);
    Ok(Json(
        hits.into_iter()
            .map(|h| {
                let r = store.recordings.get(&h.recording_id);
                SearchResult {
                    title: r.map(|r| r.title.clone()).unwrap_or_default(),
                    speaker: r.map(|r| r.speaker.clone()).unwrap_or_default(),
                    topic: topic_of(store, &h.recording_id),
                    image_url: store.recording_image(&h.recording_id).map(image_url),
                    recording_id: h.recording_id,
                    score: h.score,
                    category: h.category,
                    matched_terms: h.matched_terms,
                }
            })
            .collect(),
    ))
}

async fn illustration(State(state): State<AppState>, UrlPath(file): UrlPath<String>) -> ApiResult<Response> {
    let store = state.store()?;
    let not_found = || ApiError::NotFound(format!("unknown illustration: {file}"));
    if !file.ends_with(".png") {
        return Err(not_found());
    }
    let asset = store.image_by_file(&file).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(store.images_dir.join(&asset.file))
        .await
        .map_err(ApiError::Io)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable".to_string()),
            (header::ETAG, format!("\"{}\"", asset.digest)),
        ],
        bytes,
    )
        .into_response())
}
