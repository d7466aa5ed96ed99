//! HTTP routes. All bodies are JSON; errors are `{"error": "..."}`.
//!
//! | Route | Body | Response |
//! |---|---|---|
//! | `GET /queue/{subject}?count=N&worker=W` | | `{"subject", "tasks": [Task]}` |
//! | `POST /annotations` | `{"doc_id", "worker_id", "label", "timestamp"?}` | `{"doc_id", "outcome", "label"?}` |
//! | `GET /status/{subject}` | | summary counts, `agreement_rate`, `refits`, `latest` |
//! | `POST /refit/{subject}` | | the new refit point |
//!
//! `count` defaults to 10. Unknown subjects and documents give 404,
//! duplicate or late annotations 409, off-scale labels 400 and a refit
//! without usable resolved labels 422.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::board::{Annotation, Outcome, QueueSummary, Task};
use crate::error::ServiceError;
use crate::{AppState, RefitPoint};

pub const DEFAULT_COUNT: usize = 10;

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    pub count: Option<usize>,
    pub worker: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueResponse {
    pub subject: String,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub doc_id: String,
    pub worker_id: String,
    pub label: f64,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub doc_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    #[serde(flatten)]
    pub summary: QueueSummary,
    pub refits: Vec<RefitPoint>,
    pub latest: Option<RefitPoint>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/queue/{subject}", get(queue))
        .route("/annotations", post(annotate))
        .route("/status/{subject}", get(status))
        .route("/refit/{subject}", post(refit))
        .with_state(state)
}

async fn queue(
    State(app): State<Arc<AppState>>,
    Path(subject): Path<String>,
    Query(params): Query<QueueParams>,
) -> Result<Json<QueueResponse>, ServiceError> {
    let worker = params
        .worker
        .filter(|w| !w.is_empty())
        .ok_or_else(|| ServiceError::BadRequest("the worker parameter is required".into()))?;
    let tasks = app.next_tasks(&subject, params.count.unwrap_or(DEFAULT_COUNT), &worker)?;
    Ok(Json(QueueResponse { subject, tasks }))
}

async fn annotate(
    State(app): State<Arc<AppState>>,
    Json(req): Json<AnnotationRequest>,
) -> Result<Json<AnnotationResponse>, ServiceError> {
    let timestamp = req.timestamp.unwrap_or_else(|| app.now());
    let doc_id = req.doc_id.clone();
    let outcome = app.submit(Annotation {
        doc_id: req.doc_id,
        worker_id: req.worker_id,
        label: req.label,
        timestamp,
    })?;
    Ok(Json(AnnotationResponse { doc_id, outcome }))
}

async fn status(State(app): State<Arc<AppState>>, Path(subject): Path<String>) -> Result<Json<StatusResponse>, ServiceError> {
    let summary = app.summary(&subject)?;
    let refits: Vec<RefitPoint> = app
        .refits()
        .iter()
        .filter(|p| p.subject == subject)
        .cloned()
        .collect();
    let latest = refits.last().cloned();
    Ok(Json(StatusResponse { summary, refits, latest }))
}

async fn refit(State(app): State<Arc<AppState>>, Path(subject): Path<String>) -> Result<Json<RefitPoint>, ServiceError> {
    Ok(Json(app.refit(&subject).await?))
}
