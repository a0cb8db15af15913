//! HTTP layer over [`TrustedProxy`]: the subject-side prompt endpoint and
//! the agent-side brokered endpoints, all keyed by request ID.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;

use super::{AgentAuthorizeBody, ProxyError, TrustedProxy};

#[derive(Clone)]
struct AppState {
    proxy: Arc<TrustedProxy>,
}

pub fn router(proxy: Arc<TrustedProxy>) -> Router {
    let state = AppState { proxy };
    Router::new()
        .route("/prompt", post(post_prompt))
        .route("/agent/as-metadata", post(post_metadata))
        .route("/agent/authorize", post(post_authorize))
        .route("/agent/token", post(post_token))
        .route("/agent/finalize", post(post_finalize))
        .with_state(state)
}

fn error_response(err: ProxyError) -> Response {
    let (status, code) = match &err {
        ProxyError::UnknownRequest => (StatusCode::NOT_FOUND, "unknown_request"),
        ProxyError::EmptyPrompt => (StatusCode::BAD_REQUEST, "empty_prompt"),
        ProxyError::PromptTampered => (StatusCode::BAD_REQUEST, "prompt_tampered"),
        ProxyError::Transport(_) => (StatusCode::BAD_GATEWAY, "upstream_error"),
        ProxyError::ForeignUpstream(_) => (StatusCode::BAD_REQUEST, "foreign_upstream"),
    };
    (status, Json(serde_json::json!({"error": code}))).into_response()
}

#[derive(Debug, Deserialize)]
struct PromptBody {
    subject_id: String,
    prompt: String,
}

async fn post_prompt(State(state): State<AppState>, Json(body): Json<PromptBody>) -> Response {
    state.proxy.sweep_expired().await;
    match state.proxy.intercept_prompt(&body.subject_id, &body.prompt) {
        Ok(forwarded) => (
            StatusCode::OK,
            Json(serde_json::json!({
                "request_id": forwarded.request_id,
                "forwarded": forwarded,
            })),
        )
            .into_response(),
        Err(err) => error_response(err),
    }
}

#[derive(Debug, Deserialize)]
struct MetadataBody {
    request_id: String,
    #[serde(default)]
    url: Option<String>,
}

async fn post_metadata(State(state): State<AppState>, Json(body): Json<MetadataBody>) -> Response {
    state.proxy.sweep_expired().await;
    match state
        .proxy
        .proxy_metadata_request(&body.request_id, body.url.as_deref())
        .await
    {
        Ok(relayed) => (
            StatusCode::from_u16(relayed.status).unwrap_or(StatusCode::BAD_GATEWAY),
            Json(relayed.body),
        )
            .into_response(),
        Err(err) => error_response(err),
    }
}

async fn post_authorize(
    State(state): State<AppState>,
    Json(body): Json<AgentAuthorizeBody>,
) -> Response {
    state.proxy.sweep_expired().await;
    match state.proxy.proxy_authorization_request(&body).await {
        Ok(relayed) => (
            StatusCode::from_u16(relayed.status).unwrap_or(StatusCode::BAD_GATEWAY),
            Json(relayed.body),
        )
            .into_response(),
        Err(err) => error_response(err),
    }
}

#[derive(Debug, Deserialize)]
struct TokenBody {
    request_id: String,
    code: String,
    code_verifier: String,
}

async fn post_token(State(state): State<AppState>, Json(body): Json<TokenBody>) -> Response {
    state.proxy.sweep_expired().await;
    match state
        .proxy
        .proxy_token_request(&body.request_id, &body.code, &body.code_verifier)
        .await
    {
        Ok(relayed) => (
            StatusCode::from_u16(relayed.status).unwrap_or(StatusCode::BAD_GATEWAY),
            Json(relayed.body),
        )
            .into_response(),
        Err(err) => error_response(err),
    }
}

#[derive(Debug, Deserialize)]
struct FinalizeBody {
    request_id: String,
}

async fn post_finalize(State(state): State<AppState>, Json(body): Json<FinalizeBody>) -> Response {
    state.proxy.sweep_expired().await;
    let acknowledged = state.proxy.finalize_request(&body.request_id).await;
    (
        StatusCode::OK,
        Json(serde_json::json!({"finalized": acknowledged})),
    )
        .into_response()
}
