use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{ToolError, ToolRegistry, ToolService};
use crate::http::{serve_router, ServerHandle};
use crate::pipeline::PipelineError;

#[derive(Deserialize)]
struct SearchParams {
    q: String,
    k: Option<usize>,
}

impl IntoResponse for ToolError {
    fn into_response(self) -> Response {
        let status = match &self {
            ToolError::NotFound(_) => StatusCode::NOT_FOUND,
            ToolError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ToolError::Unsupported(_) => StatusCode::NOT_IMPLEMENTED,
            ToolError::Pipeline(PipelineError::Stage { .. }) | ToolError::Remote(_) => StatusCode::BAD_GATEWAY,
            ToolError::Pipeline(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": self.code(), "message": self.to_string()});
        (status, Json(body)).into_response()
    }
}

async fn search(State(svc): State<Arc<ToolService>>, Query(p): Query<SearchParams>) -> Response {
    let k = p.k.unwrap_or(svc.pipeline.config().k);
    // the pipeline may block on a remote scorer
    let result = tokio::task::spawn_blocking(move || svc.search_k(&p.q, k)).await;
    match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn document(State(svc): State<Arc<ToolService>>, Path(id): Path<String>) -> Response {
    match svc.get_document(&id) {
        Ok(d) => Json(d).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

pub fn router(svc: Arc<ToolService>) -> Router {
    Router::new()
        .route("/search", get(search))
        .route("/doc/{id}", get(document))
        .route("/healthz", get(healthz))
        .with_state(svc)
}

/// Serves `GET /search?q=&k=`, `GET /doc/{id}` and `GET /healthz`.
pub fn serve_http(bind: &str, svc: Arc<ToolService>) -> std::io::Result<ServerHandle> {
    serve_router(bind, router(svc))
}
