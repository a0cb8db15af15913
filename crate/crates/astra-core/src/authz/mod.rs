//! Authorization server: metadata publication, semantic inspection of
//! proxied authorization requests, PKCE-protected code-for-token exchange,
//! scope-constrained ephemeral token issuance, and revocation.
//!
//! Two policy modes: `Static` reproduces a conventional server that grants
//! any allowed scope without seeing the task, and `Semantic` inspects the
//! proxied original prompt through a matcher and strips every scope the
//! matcher does not approve.

pub mod http;
mod metadata;
pub mod pkce;
pub mod token;

pub use http::{multi_router, router, router_with_tap, CapturedRequest, WireTap};
pub use metadata::AuthorizationServerMetadata;
pub use pkce::{derive_challenge, generate_verifier, verify_pkce};
pub use token::{sign_token, verify_token, Claims, TokenError};

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditLog;
use crate::clock::Clock;
use crate::domain::{TaskSample, ToolDescriptor, ToolRegistry};
use crate::matchers::{match_scope_set, ScopeMatcher};

#[derive(Debug, Error)]
pub enum AuthzError {
    #[error("unsupported code challenge method {0:?}")]
    UnsupportedChallengeMethod(String),
    #[error("configuration invalid: {0}")]
    Config(String),
}

/// Grant lifetime cap; authorization codes are strictly short-lived.
pub const MAX_GRANT_TTL_SECS: u64 = 60;

/// Policy applied at the authorization endpoint.
#[derive(Debug, Clone)]
pub enum AuthzMode {
    /// Conventional static policy: grant whatever is requested as long as
    /// it is within the allowed set. No task visibility.
    Static { allowed_scopes: BTreeSet<String> },
    /// Semantic inspection of the proxied original prompt.
    Semantic,
}

#[derive(Debug, Clone)]
pub struct AuthzConfig {
    pub issuer: String,
    pub scopes_supported: Option<Vec<String>>,
    pub response_types_supported: Vec<String>,
    pub token_endpoint_auth_methods_supported: Vec<String>,
    pub token_endpoint_auth_signing_alg_values_supported: Vec<String>,
    pub ui_locales_supported: Option<Vec<String>>,
    pub service_documentation: Option<String>,
    pub grant_ttl_secs: u64,
    pub token_ttl_secs: u64,
    /// All-or-nothing grants instead of stripping unmatched scopes.
    pub strict_scope_mode: bool,
    /// Shared secret authenticating the trusted proxy channel.
    pub proxy_secret: String,
    pub signing_key: Vec<u8>,
    pub mode: AuthzMode,
    /// Seeds code/handle generation for reproducible flow transcripts;
    /// `None` draws entropy from the OS.
    pub rng_seed: Option<u64>,
}

impl AuthzConfig {
    pub fn new(issuer: impl Into<String>, proxy_secret: impl Into<String>, key: &[u8]) -> Self {
        Self {
            issuer: issuer.into(),
            scopes_supported: None,
            response_types_supported: vec!["code".into(), "code token".into()],
            token_endpoint_auth_methods_supported: vec![
                "client_secret_basic".into(),
                "private_key_jwt".into(),
            ],
            token_endpoint_auth_signing_alg_values_supported: vec!["RS256".into(), "ES256".into()],
            ui_locales_supported: None,
            service_documentation: None,
            grant_ttl_secs: MAX_GRANT_TTL_SECS,
            token_ttl_secs: 300,
            strict_scope_mode: false,
            proxy_secret: proxy_secret.into(),
            signing_key: key.to_vec(),
            mode: AuthzMode::Semantic,
            rng_seed: None,
        }
    }

    /// Discovery-example fixture: the scopes, endpoints, and locales used
    /// by the metadata golden tests.
    pub fn example_fixture() -> Self {
        let mut cfg = Self::new(
            "https://server.example.com",
            "fixture-proxy-secret",
            b"fixture-signing-key",
        );
        cfg.scopes_supported = Some(vec!["scope1".into(), "scope7".into(), "scope19".into()]);
        cfg.ui_locales_supported = Some(vec![
            "en-US".into(),
            "en-GB".into(),
            "en-CA".into(),
            "fr-FR".into(),
            "fr-CA".into(),
        ]);
        cfg.service_documentation =
            Some("http://server.example.com/service_documentation.html".into());
        cfg
    }

    pub fn validate(&self) -> Result<(), AuthzError> {
        if self.grant_ttl_secs > MAX_GRANT_TTL_SECS {
            return Err(AuthzError::Config(format!(
                "grant_ttl_secs {} exceeds cap {MAX_GRANT_TTL_SECS}",
                self.grant_ttl_secs
            )));
        }
        if self.signing_key.is_empty() {
            return Err(AuthzError::Config("signing key is empty".into()));
        }
        Ok(())
    }
}

/// Proxied authorization request as inspected by the server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorizationContext {
    pub principal_id: String,
    pub requested_scopes: Vec<String>,
    pub code_challenge: String,
    pub challenge_method: String,
    pub original_prompt: String,
    /// Set by the server from the authenticated channel, never from the
    /// request body.
    #[serde(skip)]
    pub received_via_proxy: bool,
}

/// Single-use authorization code and what it stands for.
#[derive(Debug, Clone)]
pub struct AuthorizationGrant {
    pub code: String,
    pub granted_scopes: BTreeSet<String>,
    pub principal_id: String,
    pub code_challenge: String,
    pub expires_at: u64,
    pub consumed: bool,
    /// Revocation handle; becomes the token's `jti`.
    pub handle: String,
}

/// Authorization response relayed back through the proxy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrantResponse {
    pub code: String,
    pub granted_scopes: Vec<String>,
    pub expires_in: u64,
    pub revocation_handle: String,
}

/// Client-facing denial: just the error code. Matcher identity and
/// rationale stay in the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub error: String,
}

impl Denial {
    fn new(code: &str) -> Self {
        Self { error: code.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: u64,
    pub scope: String,
}

/// Shared revocation list; the resource server checks it on every access.
#[derive(Debug, Default)]
pub struct RevocationList {
    revoked: RwLock<BTreeSet<String>>,
}

impl RevocationList {
    pub fn revoke(&self, handle: &str) {
        self.revoked.write().unwrap().insert(handle.to_string());
    }

    pub fn is_revoked(&self, handle: &str) -> bool {
        self.revoked.read().unwrap().contains(handle)
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.revoked.read().unwrap().iter().cloned().collect()
    }

    pub fn replace(&self, handles: Vec<String>) {
        *self.revoked.write().unwrap() = handles.into_iter().collect();
    }
}

struct AuthzState {
    grants: HashMap<String, AuthorizationGrant>,
    rng: ChaCha8Rng,
}

/// The authorization server core; HTTP handlers are thin wrappers over
/// these methods.
pub struct AuthzServer {
    cfg: AuthzConfig,
    registry: Arc<ToolRegistry>,
    matcher: Arc<dyn ScopeMatcher>,
    clock: Arc<dyn Clock>,
    audit: AuditLog,
    revocations: Arc<RevocationList>,
    state: Mutex<AuthzState>,
}

impl AuthzServer {
    pub fn new(
        cfg: AuthzConfig,
        registry: Arc<ToolRegistry>,
        matcher: Arc<dyn ScopeMatcher>,
        clock: Arc<dyn Clock>,
        audit: AuditLog,
    ) -> Result<Self, AuthzError> {
        cfg.validate()?;
        let rng = match cfg.rng_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Ok(Self {
            cfg,
            registry,
            matcher,
            clock,
            audit,
            revocations: Arc::new(RevocationList::default()),
            state: Mutex::new(AuthzState {
                grants: HashMap::new(),
                rng,
            }),
        })
    }

    pub fn config(&self) -> &AuthzConfig {
        &self.cfg
    }

    pub fn revocation_list(&self) -> Arc<RevocationList> {
        Arc::clone(&self.revocations)
    }

    pub fn signing_key(&self) -> &[u8] {
        &self.cfg.signing_key
    }

    /// Discovery document for this instance.
    pub fn metadata(&self) -> AuthorizationServerMetadata {
        let base = self.cfg.issuer.trim_end_matches('/');
        AuthorizationServerMetadata {
            issuer: self.cfg.issuer.clone(),
            authorization_endpoint: format!("{base}/authorize"),
            token_endpoint: format!("{base}/token"),
            token_endpoint_auth_methods_supported: Some(
                self.cfg.token_endpoint_auth_methods_supported.clone(),
            ),
            token_endpoint_auth_signing_alg_values_supported: Some(
                self.cfg
                    .token_endpoint_auth_signing_alg_values_supported
                    .clone(),
            ),
            userinfo_endpoint: Some(format!("{base}/userinfo")),
            jwks_uri: Some(format!("{base}/jwks.json")),
            registration_endpoint: Some(format!("{base}/register")),
            scopes_supported: self.cfg.scopes_supported.clone(),
            response_types_supported: self.cfg.response_types_supported.clone(),
            code_challenge_methods_supported: vec!["S256".into()],
            service_documentation: self.cfg.service_documentation.clone(),
            ui_locales_supported: self.cfg.ui_locales_supported.clone(),
        }
    }

    fn random_b64(&self, state: &mut AuthzState) -> String {
        let mut bytes = [0u8; 16];
        state.rng.fill_bytes(&mut bytes);
        URL_SAFE_NO_PAD.encode(bytes)
    }

    /// Inspects a proxied authorization request and mints a single-use
    /// grant for the approved scope subset.
    ///
    /// Unknown scopes deny with `invalid_scope`; a request that did not
    /// arrive over the authenticated proxy channel denies with
    /// `unauthorized_channel` (semantic mode); matcher failures deny the
    /// affected scope, never the other way around.
    pub fn handle_authorization_request(
        &self,
        ctx: &AuthorizationContext,
    ) -> Result<GrantResponse, Denial> {
        // Channel check first: in semantic mode a request that did not come
        // through the trusted proxy is rejected regardless of content.
        if matches!(self.cfg.mode, AuthzMode::Semantic) && !ctx.received_via_proxy {
            self.audit_denial(ctx, "unauthorized_channel", None);
            return Err(Denial::new("unauthorized_channel"));
        }
        if ctx.requested_scopes.is_empty() {
            return Err(Denial::new("invalid_request"));
        }
        if ctx.challenge_method != "S256" {
            return Err(Denial::new("invalid_request"));
        }

        // Resolve every scope first; unknown scope is not a matter of
        // semantics.
        let mut tools: Vec<ToolDescriptor> = Vec::with_capacity(ctx.requested_scopes.len());
        for scope in &ctx.requested_scopes {
            match self.registry.resolve_scope(scope) {
                Some(tool) => tools.push(tool.clone()),
                None => {
                    self.audit_denial(ctx, "invalid_scope", Some(scope));
                    return Err(Denial::new("invalid_scope"));
                }
            }
        }

        let granted: BTreeSet<String> = match &self.cfg.mode {
            AuthzMode::Static { allowed_scopes } => {
                if let Some(outside) = ctx
                    .requested_scopes
                    .iter()
                    .find(|s| !allowed_scopes.contains(*s))
                {
                    self.audit_denial(ctx, "invalid_scope", Some(outside));
                    return Err(Denial::new("invalid_scope"));
                }
                ctx.requested_scopes.iter().cloned().collect()
            }
            AuthzMode::Semantic => {
                if ctx.original_prompt.is_empty() {
                    self.audit_denial(ctx, "invalid_request", None);
                    return Err(Denial::new("invalid_request"));
                }
                let task = TaskSample::from_prompt(
                    format!("authz-{}", ctx.principal_id),
                    ctx.original_prompt.clone(),
                );
                let result = match match_scope_set(&task, &tools, self.matcher.as_ref()) {
                    Ok(result) => result,
                    Err(err) => {
                        tracing::warn!(error = %err, "scope set rejected");
                        self.audit_denial(ctx, "invalid_request", None);
                        return Err(Denial::new("invalid_request"));
                    }
                };
                self.audit.append(&serde_json::json!({
                    "event": "inspection",
                    "principal_id": ctx.principal_id,
                    "requested_scopes": ctx.requested_scopes,
                    "per_scope": result
                        .per_tool
                        .iter()
                        .map(|(scope, d)| serde_json::json!({
                            "scope": scope,
                            "appropriate": d.appropriate,
                            "matcher_id": d.matcher_id,
                            "score": d.score,
                            "rationale": d.rationale,
                        }))
                        .collect::<Vec<_>>(),
                    "fully_granted": result.fully_granted,
                    "at": self.clock.now_unix(),
                }));
                if self.cfg.strict_scope_mode && !result.fully_granted {
                    return Err(Denial::new("no_scope_matches_task"));
                }
                result.granted_scopes
            }
        };

        if granted.is_empty() {
            return Err(Denial::new("no_scope_matches_task"));
        }

        let now = self.clock.now_unix();
        let mut state = self.state.lock().unwrap();
        let code = self.random_b64(&mut state);
        let handle = self.random_b64(&mut state);
        let grant = AuthorizationGrant {
            code: code.clone(),
            granted_scopes: granted.clone(),
            principal_id: ctx.principal_id.clone(),
            code_challenge: ctx.code_challenge.clone(),
            expires_at: now + self.cfg.grant_ttl_secs,
            consumed: false,
            handle: handle.clone(),
        };
        state.grants.insert(code.clone(), grant);
        self.audit.append(&serde_json::json!({
            "event": "grant",
            "principal_id": ctx.principal_id,
            "granted_scopes": granted,
            "handle": handle,
            "at": now,
        }));
        Ok(GrantResponse {
            code,
            granted_scopes: granted.into_iter().collect(),
            expires_in: self.cfg.grant_ttl_secs,
            revocation_handle: handle,
        })
    }

    fn audit_denial(&self, ctx: &AuthorizationContext, code: &str, scope: Option<&String>) {
        self.audit.append(&serde_json::json!({
            "event": "denial",
            "principal_id": ctx.principal_id,
            "error": code,
            "scope": scope,
            "at": self.clock.now_unix(),
        }));
    }

    /// Exchanges a grant code plus PKCE verifier for a signed access
    /// token. Expired, unknown, consumed, or revoked codes and verifier
    /// mismatches are externally indistinguishable (`invalid_grant`); the
    /// audit log records which it was.
    pub fn exchange_code(&self, code: &str, code_verifier: &str) -> Result<TokenResponse, Denial> {
        let now = self.clock.now_unix();
        let mut state = self.state.lock().unwrap();
        let denial_reason;
        if let Some(grant) = state.grants.get_mut(code) {
            if grant.consumed {
                denial_reason = "code_replayed";
            } else if now >= grant.expires_at {
                denial_reason = "code_expired";
            } else if self.revocations.is_revoked(&grant.handle) {
                denial_reason = "handle_revoked";
            } else {
                // Single use: any exchange attempt consumes the code.
                grant.consumed = true;
                match verify_pkce(code_verifier, &grant.code_challenge, "S256") {
                    Ok(true) => {
                        let claims = Claims {
                            sub: grant.principal_id.clone(),
                            scope: grant
                                .granted_scopes
                                .iter()
                                .cloned()
                                .collect::<Vec<_>>()
                                .join(" "),
                            exp: now + self.cfg.token_ttl_secs,
                            jti: grant.handle.clone(),
                        };
                        let token = sign_token(&claims, &self.cfg.signing_key);
                        self.audit.append(&serde_json::json!({
                            "event": "token_issued",
                            "principal_id": grant.principal_id,
                            "jti": grant.handle,
                            "scope": claims.scope,
                            "expires_at": claims.exp,
                            "at": now,
                        }));
                        return Ok(TokenResponse {
                            access_token: token,
                            token_type: "Bearer".into(),
                            expires_in: self.cfg.token_ttl_secs,
                            scope: claims.scope,
                        });
                    }
                    Ok(false) => denial_reason = "pkce_mismatch",
                    Err(_) => denial_reason = "pkce_method",
                }
            }
        } else {
            denial_reason = "code_unknown";
        }
        self.audit.append(&serde_json::json!({
            "event": "token_denied",
            "reason": denial_reason,
            "at": now,
        }));
        Err(Denial::new("invalid_grant"))
    }

    /// Revokes every grant and live token tied to the handle. Idempotent;
    /// unknown handles acknowledge as a no-op.
    pub fn revoke(&self, principal_id: &str, handle: &str) -> bool {
        self.revocations.revoke(handle);
        let mut state = self.state.lock().unwrap();
        for grant in state.grants.values_mut() {
            if grant.handle == handle {
                grant.consumed = true;
            }
        }
        self.audit.append(&serde_json::json!({
            "event": "revoke",
            "principal_id": principal_id,
            "handle": handle,
            "at": self.clock.now_unix(),
        }));
        true
    }

    /// Token check for in-process resource servers: signature, expiry,
    /// revocation.
    pub fn check_token(&self, token: &str) -> Result<Claims, TokenError> {
        let claims = verify_token(token, &self.cfg.signing_key, self.clock.now_unix())?;
        if self.revocations.is_revoked(&claims.jti) {
            return Err(TokenError::Expired);
        }
        Ok(claims)
    }
}
