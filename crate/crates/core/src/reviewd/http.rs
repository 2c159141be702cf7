//! JSON HTTP API over a [`ReviewStore`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{Decision, ReviewError, ReviewStore, Stage};

/// Structured error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Failure(
            status,
            ApiError {
                code: code.into(),
                message: message.into(),
            },
        )
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<ReviewError> for Failure {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            ReviewError::UnknownStage(_) => (StatusCode::NOT_FOUND, "unknown_stage"),
            ReviewError::InvalidLabels { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_labels"),
            ReviewError::Conflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            ReviewError::StageMismatch { .. } => (StatusCode::BAD_REQUEST, "stage_mismatch"),
            ReviewError::Unlabeled { .. } => (StatusCode::CONFLICT, "unlabeled"),
            ReviewError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        Failure::new(status, code, e.to_string())
    }
}

type Shared = Arc<ReviewStore>;

fn parse_stage(s: &str) -> Result<Stage, Failure> {
    s.parse::<Stage>().map_err(Failure::from)
}

async fn queues(State(store): State<Shared>) -> impl IntoResponse {
    let summaries: Vec<_> = Stage::ALL.iter().map(|&s| store.queue_summary(s)).collect();
    Json(summaries)
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

const ANNOTATOR_HEADER: &str = "x-annotator";

fn annotator_from(query: Option<String>, headers: &HeaderMap) -> Option<String> {
    query.or_else(|| {
        headers
            .get(ANNOTATOR_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    })
}

async fn next(
    State(store): State<Shared>,
    Path(stage): Path<String>,
    Query(q): Query<NextQuery>,
    headers: HeaderMap,
) -> Result<Response, Failure> {
    let stage = parse_stage(&stage)?;
    let annotator = annotator_from(q.annotator, &headers)
        .ok_or_else(|| Failure::new(StatusCode::BAD_REQUEST, "missing_annotator", "annotator is required"))?;
    match store.next_task(stage, &annotator) {
        Some(view) => Ok(Json(view).into_response()),
        None => Err(Failure::new(
            StatusCode::NOT_FOUND,
            "queue_empty",
            format!("no open {stage} tasks for {annotator}"),
        )),
    }
}

async fn decisions(
    State(store): State<Shared>,
    headers: HeaderMap,
    body: Result<Json<Decision>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, Failure> {
    let Json(mut decision) =
        body.map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "malformed_body", e.body_text()))?;
    if decision.annotator.is_empty() {
        decision.annotator = annotator_from(None, &headers).unwrap_or_default();
    }
    // The store fsyncs; keep that off the async workers.
    let stored = tokio::task::spawn_blocking(move || store.submit(decision))
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

async fn progress(State(store): State<Shared>) -> impl IntoResponse {
    Json(store.progress())
}

async fn task(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, Failure> {
    store
        .task(&id)
        .map(|v| Json(v).into_response())
        .ok_or_else(|| ReviewError::UnknownTask(id).into())
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn image(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, Failure> {
    let path = store
        .image_path(&id)
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, "unknown_image", format!("no image {id}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| Failure::new(StatusCode::NOT_FOUND, "missing_image_file", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

pub fn router(store: Arc<ReviewStore>) -> Router {
    Router::new()
        .route("/queues", get(queues))
        .route("/queues/{stage}/next", get(next))
        .route("/decisions", post(decisions))
        .route("/progress", get(progress))
        .route("/images/{id}", get(image))
        .route("/tasks/{id}", get(task))
        .with_state(store)
}

/// Serves the API until the process is stopped.
pub async fn serve(store: Arc<ReviewStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
