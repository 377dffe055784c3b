//! HTTP API for the review pass.
//!
//! ```text
//! GET  /api/pairs?status=pending|all&limit=N&offset=N
//! GET  /api/pairs/{id}
//! GET  /api/pairs/{id}/image/{band}      PNG
//! POST /api/pairs/{id}/decision          DecisionRequest JSON
//! GET  /api/stats
//! ```
//!
//! Anything else is served from the UI directory when one is configured.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use matt_core::review::{DecisionRequest, ReviewError, ReviewQueueEntry, ReviewStore};
use matt_core::{Band, Error};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1000;

pub struct AppState {
    store: RwLock<ReviewStore>,
    allow_rereview: bool,
}

pub type SharedState = Arc<AppState>;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub ui_dir: Option<PathBuf>,
    pub allow_rereview: bool,
}

pub fn router(store: ReviewStore, opts: ServerOptions) -> Router {
    let state = Arc::new(AppState { store: RwLock::new(store), allow_rereview: opts.allow_rereview });
    let api = Router::new()
        .route("/api/pairs", get(list_pairs))
        .route("/api/pairs/{id}", get(get_pair))
        .route("/api/pairs/{id}/image/{band}", get(get_image))
        .route("/api/pairs/{id}/decision", post(post_decision))
        .route("/api/stats", get(stats))
        .with_state(state);
    match opts.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Review(ReviewError::NotFound(_)) => StatusCode::NOT_FOUND,
            Error::Review(ReviewError::Conflict(_)) => StatusCode::CONFLICT,
            e if e.is_validation() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        Error::from(e).into()
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Page {
    total: usize,
    offset: usize,
    items: Vec<ReviewQueueEntry>,
}

async fn list_pairs(State(state): State<SharedState>, Query(q): Query<ListQuery>) -> Result<Json<Page>, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let offset = q.offset.unwrap_or(0);
    let store = state.store.read().await;
    let stats = store.review_stats();
    let (total, items) = match q.status.as_deref().unwrap_or("pending") {
        "pending" => (stats.pending, store.list_pending(limit, offset)),
        "all" => (stats.total, store.list_all(limit, offset)),
        other => {
            return Err(ApiError(StatusCode::BAD_REQUEST, format!("unknown status `{other}`; use pending or all")))
        }
    };
    Ok(Json(Page { total, offset, items }))
}

async fn get_pair(State(state): State<SharedState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.store.read().await.get_pair(&id)?))
}

async fn get_image(
    State(state): State<SharedState>,
    Path((id, band)): Path<(String, String)>,
) -> Result<impl IntoResponse, ApiError> {
    let band: Band = band.parse().map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("unknown band `{band}`")))?;
    let png = state.store.read().await.image_png(&id, band)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

async fn post_decision(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let decision = req.into_decision(&id, chrono_now());
    let mut store = state.store.write().await;
    Ok(Json(store.post_decision(decision, state.allow_rereview)?))
}

async fn stats(State(state): State<SharedState>) -> impl IntoResponse {
    Json(state.store.read().await.review_stats())
}

async fn index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>review</title><p>Review API: <code>GET /api/pairs</code>, \
         <code>GET /api/pairs/{id}</code>, <code>POST /api/pairs/{id}/decision</code>, \
         <code>GET /api/stats</code>. Start with <code>--ui &lt;dir&gt;</code> to serve a UI bundle.</p>",
    )
}

fn chrono_now() -> matt_core::review::Timestamp {
    matt_core::review::Timestamp::from(std::time::SystemTime::now())
}
