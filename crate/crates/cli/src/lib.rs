//! HTTP API for live H-DKP sessions, consumed by the expert console.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use warmstart_core::hdkp::PostError;
use warmstart_core::runner::{ApiError, SessionManager};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPost {
    pub iteration: usize,
    pub text: String,
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(PostError::EmptyReply) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(PostError::IterationMismatch { .. }) => StatusCode::CONFLICT,
        };
        (status, Json(json!({ "accepted": false, "error": self.0.to_string() }))).into_response()
    }
}

async fn sessions(State(m): State<Arc<SessionManager>>) -> impl IntoResponse {
    Json(m.list())
}

/// 204 while the session is working and not waiting on anyone.
async fn pending(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Response, Failure> {
    Ok(match m.pending(&id).map_err(Failure)? {
        Some(q) => Json(q).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn feedback(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Json(body): Json<FeedbackPost>,
) -> Result<Response, Failure> {
    m.post(&id, body.iteration, &body.text).map_err(Failure)?;
    Ok(Json(json!({ "accepted": true })).into_response())
}

async fn history(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Response, Failure> {
    Ok(Json(m.history(&id).map_err(Failure)?).into_response())
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/api/sessions", get(sessions))
        .route("/api/sessions/{id}/pending", get(pending))
        .route("/api/sessions/{id}/feedback", post(feedback))
        .route("/api/sessions/{id}/history", get(history))
        .with_state(manager)
}
