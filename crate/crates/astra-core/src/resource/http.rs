//! HTTP layer over [`ResourceServer`]: well-known metadata (with path
//! components to support multiple resources per server) and gated tool
//! invocation.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use super::{AccessOutcome, ResourceServer};

#[derive(Clone)]
struct AppState {
    server: Arc<ResourceServer>,
}

pub fn router(server: Arc<ResourceServer>) -> Router {
    let state = AppState { server };
    Router::new()
        .route(
            "/.well-known/oauth-protected-resource/{resource}",
            get(get_metadata),
        )
        .route("/tools/{name}", post(post_tool))
        .with_state(state)
}

async fn get_metadata(State(state): State<AppState>, Path(resource): Path<String>) -> Response {
    match state.server.metadata(&resource) {
        Some(doc) => (StatusCode::OK, Json(doc)).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(serde_json::json!({"error": "unknown_resource"})),
        )
            .into_response(),
    }
}

fn bearer_from_header(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string)
}

fn challenge(server: &ResourceServer) -> Response {
    (
        StatusCode::UNAUTHORIZED,
        [(header::WWW_AUTHENTICATE, server.challenge_header())],
    )
        .into_response()
}

async fn post_tool(
    State(state): State<AppState>,
    Path(name): Path<String>,
    headers: HeaderMap,
    body: Option<Json<serde_json::Value>>,
) -> Response {
    let args = body.map(|Json(v)| v).unwrap_or(serde_json::json!({}));
    // Bearer methods: header first, then body (both advertised in the
    // resource metadata).
    let token = bearer_from_header(&headers).or_else(|| {
        args.get("access_token")
            .and_then(|v| v.as_str())
            .map(String::from)
    });
    match state.server.access_resource(token.as_deref(), &name, &args) {
        AccessOutcome::Ok(result) => (StatusCode::OK, Json(result)).into_response(),
        AccessOutcome::Unauthorized => challenge(&state.server),
        AccessOutcome::InsufficientScope { needed } => (
            StatusCode::FORBIDDEN,
            Json(serde_json::json!({"error": "insufficient_scope", "scope": needed})),
        )
            .into_response(),
        AccessOutcome::UnknownTool => (
            StatusCode::NOT_FOUND,
            Json(serde_json::json!({"error": "unknown_tool"})),
        )
            .into_response(),
    }
}
