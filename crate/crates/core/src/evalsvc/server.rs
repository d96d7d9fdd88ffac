use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use super::{AggregateFilter, ClipRegistry, EvalError, EvalService, Side, SCHEMA_VERSION};

pub const PROMPT: &str = "Which video is more realistic?";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub store_dir: PathBuf,
    pub media_root: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

type Shared = Arc<Mutex<EvalService>>;

#[derive(Debug, Deserialize)]
struct PairQuery {
    rater_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceRequest {
    pair_id: String,
    choice: Side,
    rater_id: String,
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    /// Comma-separated rater ids.
    exclude: Option<String>,
}

#[derive(Debug, Serialize)]
struct ClipView {
    clip: String,
    url: String,
}

fn clip_view(id: &str) -> ClipView {
    ClipView {
        clip: id.into(),
        url: format!("/media/{id}"),
    }
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({"schema_version": SCHEMA_VERSION, "error": msg.to_string()}))).into_response()
}

fn eval_error(e: EvalError) -> Response {
    let status = match e {
        EvalError::UnknownPair(_) => StatusCode::NOT_FOUND,
        EvalError::Duplicate { .. } => StatusCode::CONFLICT,
        EvalError::Invalid(_) => StatusCode::BAD_REQUEST,
        EvalError::NotEnoughModels(_) => StatusCode::SERVICE_UNAVAILABLE,
        EvalError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error(status, e)
}

async fn get_pair(State(svc): State<Shared>, Query(q): Query<PairQuery>) -> Response {
    let mut svc = svc.lock().await;
    match svc.next_pair(q.rater_id.as_deref()) {
        Ok(p) => Json(json!({
            "schema_version": SCHEMA_VERSION,
            "pair_id": p.pair_id,
            "prompt": PROMPT,
            "left": clip_view(p.left_clip()),
            "right": clip_view(p.right_clip()),
        }))
        .into_response(),
        Err(e) => eval_error(e),
    }
}

async fn post_choice(State(svc): State<Shared>, body: Bytes) -> Response {
    let req: ChoiceRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let mut svc = svc.lock().await;
    match svc.record_choice(&req.pair_id, req.choice, &req.rater_id) {
        Ok(r) => Json(json!({
            "schema_version": SCHEMA_VERSION,
            "status": "recorded",
            "pair_id": r.pair_id,
            "rater_id": r.rater_id,
            "answered": svc.records().iter().filter(|x| x.rater_id == req.rater_id).count(),
        }))
        .into_response(),
        Err(e) => eval_error(e),
    }
}

async fn get_results(State(svc): State<Shared>, Query(q): Query<ResultsQuery>) -> Response {
    let exclude_raters: BTreeSet<String> = q
        .exclude
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let table = svc.lock().await.aggregate(&AggregateFilter { exclude_raters });
    Json(table).into_response()
}

async fn get_health(State(svc): State<Shared>) -> Response {
    let svc = svc.lock().await;
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "models": svc.registry().models(),
        "clips": svc.registry().len(),
        "issued": svc.issued(),
        "records": svc.records().len(),
    }))
    .into_response()
}

async fn get_media(State(svc): State<Shared>, UrlPath(clip): UrlPath<String>) -> Response {
    let path = match svc.lock().await.registry().clip(&clip) {
        Some(c) => c.path.clone(),
        None => return error(StatusCode::NOT_FOUND, format!("unknown clip {clip:?}")),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/gif")], bytes).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e),
    }
}

/// API routes over `svc`, plus the static bundle at `/` when given.
pub fn router(svc: EvalService, static_dir: Option<PathBuf>) -> Router {
    let state: Shared = Arc::new(Mutex::new(svc));
    let api = Router::new()
        .route("/api/pair", get(get_pair))
        .route("/api/choice", post(post_choice))
        .route("/api/results", get(get_results))
        .route("/api/health", get(get_health))
        .route("/media/{*clip}", get(get_media))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { error(StatusCode::NOT_FOUND, "no such route") }),
    }
}

fn open_service(cfg: &ServerConfig) -> super::Result<EvalService> {
    let registry = ClipRegistry::scan(&cfg.media_root)?;
    EvalService::open(&cfg.store_dir, registry, cfg.seed)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, cfg: &ServerConfig) -> std::io::Result<()> {
    let svc = open_service(cfg).map_err(std::io::Error::other)?;
    axum::serve(listener, router(svc, cfg.static_dir.clone())).await
}

/// A server on its own runtime. Dropping or [`EvalServer::kill`] stops it
/// abruptly, without draining in-flight requests.
pub struct EvalServer {
    addr: SocketAddr,
    runtime: tokio::runtime::Runtime,
}

impl EvalServer {
    pub fn start(cfg: &ServerConfig) -> std::io::Result<Self> {
        let svc = open_service(cfg).map_err(std::io::Error::other)?;
        let std_listener = std::net::TcpListener::bind(cfg.bind)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let app = router(svc, cfg.static_dir.clone());
        runtime.spawn(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, app).await
        });
        Ok(Self { addr, runtime })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn kill(self) {
        self.runtime.shutdown_background();
    }
}
