//! HTTP layer over [`AuthzServer`]: discovery, authorize, token, revoke,
//! and the revocation polling endpoint.
//!
//! `POST /authorize` is the proxy-only listener: the caller must present
//! the shared proxy secret; whether it did is recorded on the context and
//! enforced by the core in semantic mode.

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{AuthorizationContext, AuthzServer, Denial};

/// Header carrying the shared proxy secret.
pub const PROXY_SECRET_HEADER: &str = "x-proxy-secret";

/// One upstream request captured by the wire tap.
#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub method: String,
    pub uri: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl CapturedRequest {
    /// True when `needle` appears anywhere in the method, URI, headers, or
    /// body; used to assert what must never reach this server.
    pub fn contains(&self, needle: &str) -> bool {
        self.method.contains(needle)
            || self.uri.contains(needle)
            || self
                .headers
                .iter()
                .any(|(k, v)| k.contains(needle) || v.contains(needle))
            || self.body.contains(needle)
    }
}

/// Shared capture buffer recording every request this server sees.
pub type WireTap = Arc<Mutex<Vec<CapturedRequest>>>;

#[derive(Clone)]
struct AppState {
    server: Arc<AuthzServer>,
}

pub fn router(server: Arc<AuthzServer>) -> Router {
    build_router(server, None)
}

/// Router with a wire tap in front: integration tests assert on the exact
/// bytes the server received.
pub fn router_with_tap(server: Arc<AuthzServer>, tap: WireTap) -> Router {
    build_router(server, Some(tap))
}

fn build_router(server: Arc<AuthzServer>, tap: Option<WireTap>) -> Router {
    let state = AppState { server };
    let mut router = Router::new()
        .route("/.well-known/oauth-authorization-server", get(get_metadata))
        .route("/authorize", post(post_authorize))
        .route("/token", post(post_token))
        .route("/revoke", post(post_revoke))
        .route("/revocations", get(get_revocations))
        .with_state(state);
    if let Some(tap) = tap {
        router = router.layer(middleware::from_fn_with_state(tap, capture_request));
    }
    router
}

/// Mounts several virtual authorization server instances under path
/// segments (`/{instance}/authorize`, ...). Instances share nothing: each
/// carries its own registry, policy, grant store, and revocation list, so
/// one agentic application's scopes never bleed into another's.
pub fn multi_router(instances: impl IntoIterator<Item = (String, Arc<AuthzServer>)>) -> Router {
    let mut router = Router::new();
    for (segment, server) in instances {
        router = router.nest(&format!("/{segment}"), build_router(server, None));
    }
    router
}

async fn capture_request(State(tap): State<WireTap>, request: Request, next: Next) -> Response {
    let (parts, body) = request.into_parts();
    let bytes = axum::body::to_bytes(body, 1 << 20)
        .await
        .unwrap_or_default();
    tap.lock().unwrap().push(CapturedRequest {
        method: parts.method.to_string(),
        uri: parts.uri.to_string(),
        headers: parts
            .headers
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str().to_string(),
                    v.to_str().unwrap_or("<binary>").to_string(),
                )
            })
            .collect(),
        body: String::from_utf8_lossy(&bytes).into_owned(),
    });
    let request = Request::from_parts(parts, Body::from(bytes));
    next.run(request).await
}

async fn get_metadata(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.server.metadata())
}

/// Authorization request body as sent by the trusted proxy.
#[derive(Debug, Serialize, Deserialize)]
pub struct AuthorizeBody {
    pub principal_id: String,
    pub scopes: Vec<String>,
    pub code_challenge: String,
    pub code_challenge_method: String,
    #[serde(default)]
    pub original_prompt: String,
}

fn denial_status(denial: &Denial) -> StatusCode {
    match denial.error.as_str() {
        "unauthorized_channel" => StatusCode::UNAUTHORIZED,
        "invalid_scope" | "invalid_request" => StatusCode::BAD_REQUEST,
        "no_scope_matches_task" => StatusCode::FORBIDDEN,
        "invalid_grant" => StatusCode::BAD_REQUEST,
        _ => StatusCode::BAD_REQUEST,
    }
}

async fn post_authorize(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<AuthorizeBody>,
) -> Response {
    let via_proxy = headers
        .get(PROXY_SECRET_HEADER)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == state.server.config().proxy_secret);
    let ctx = AuthorizationContext {
        principal_id: body.principal_id,
        requested_scopes: body.scopes,
        code_challenge: body.code_challenge,
        challenge_method: body.code_challenge_method,
        original_prompt: body.original_prompt,
        received_via_proxy: via_proxy,
    };
    let server = Arc::clone(&state.server);
    // The matcher may block on a language-model backend.
    let result = tokio::task::spawn_blocking(move || server.handle_authorization_request(&ctx))
        .await
        .expect("authorization task panicked");
    match result {
        Ok(grant) => (StatusCode::OK, Json(grant)).into_response(),
        Err(denial) => (denial_status(&denial), Json(denial)).into_response(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenBody {
    #[serde(default)]
    pub grant_type: String,
    pub code: String,
    pub code_verifier: String,
}

async fn post_token(State(state): State<AppState>, Json(body): Json<TokenBody>) -> Response {
    match state.server.exchange_code(&body.code, &body.code_verifier) {
        Ok(token) => (StatusCode::OK, Json(token)).into_response(),
        Err(denial) => (denial_status(&denial), Json(denial)).into_response(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RevokeBody {
    pub principal_id: String,
    pub handle: String,
}

async fn post_revoke(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<RevokeBody>,
) -> Response {
    let via_proxy = headers
        .get(PROXY_SECRET_HEADER)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == state.server.config().proxy_secret);
    if !via_proxy {
        return (
            StatusCode::UNAUTHORIZED,
            Json(Denial {
                error: "unauthorized_channel".into(),
            }),
        )
            .into_response();
    }
    let revoked = state.server.revoke(&body.principal_id, &body.handle);
    (
        StatusCode::OK,
        Json(serde_json::json!({ "revoked": revoked })),
    )
        .into_response()
}

async fn get_revocations(State(state): State<AppState>) -> impl IntoResponse {
    Json(serde_json::json!({
        "revoked": state.server.revocation_list().snapshot()
    }))
}
