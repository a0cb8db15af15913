//! Trusted proxy: captures the subject's prompt, mints request IDs,
//! brokers all agent-to-authorization-server traffic, attaches the stored
//! original prompt, and finalizes/revokes when the task completes.
//!
//! The request ID exists only between agent and proxy; upstream messages
//! never carry it. The prompt sent upstream is always the one captured at
//! interception — agent-supplied prompt fields are ignored (or rejected in
//! strict mode) and flagged in the audit log.

pub mod http;

pub use http::router;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditLog;
use crate::authz::http::PROXY_SECRET_HEADER;
use crate::clock::Clock;

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("request id is unknown, finalized, or revoked")]
    UnknownRequest,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("agent-supplied prompt rejected in strict mode")]
    PromptTampered,
    #[error("upstream unreachable: {0}")]
    Transport(String),
    #[error("metadata url {0:?} is not under the configured authorization server")]
    ForeignUpstream(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordState {
    Active,
    Finalized,
    Revoked,
}

/// One intercepted prompt and its delegated-authorization lifecycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: String,
    pub original_prompt: String,
    pub subject_id: String,
    pub created_at: u64,
    pub state: RecordState,
    /// Revocation handle learned from the authorization response, if any.
    pub revocation_handle: Option<String>,
}

/// Message forwarded to the principal after interception: the verbatim
/// prompt plus the request-id metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardedMessage {
    pub request_id: String,
    pub prompt: String,
}

/// Relayed upstream response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Relayed {
    pub status: u16,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    /// Authorization server base URL.
    pub as_base: String,
    /// Shared secret authenticating this proxy to the server.
    pub proxy_secret: String,
    /// Active records older than this are auto-revoked.
    pub max_task_secs: u64,
    /// Reject (rather than ignore) agent-supplied prompt fields.
    pub strict_prompt_mode: bool,
    /// Seeded request-id generation for reproducible transcripts.
    pub rng_seed: Option<u64>,
}

impl ProxyConfig {
    pub fn new(as_base: impl Into<String>, proxy_secret: impl Into<String>) -> Self {
        Self {
            as_base: as_base.into(),
            proxy_secret: proxy_secret.into(),
            max_task_secs: 900,
            strict_prompt_mode: false,
            rng_seed: None,
        }
    }
}

/// Authorization request as the agent submits it to the proxy. Any
/// `prompt` the agent attaches is not what gets forwarded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentAuthorizeBody {
    pub request_id: String,
    pub principal_id: String,
    pub scopes: Vec<String>,
    pub code_challenge: String,
    pub code_challenge_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

pub struct TrustedProxy {
    cfg: ProxyConfig,
    clock: Arc<dyn Clock>,
    audit: AuditLog,
    records: Mutex<HashMap<String, RequestRecord>>,
    rng: Mutex<ChaCha8Rng>,
    http: reqwest::Client,
}

impl TrustedProxy {
    pub fn new(cfg: ProxyConfig, clock: Arc<dyn Clock>, audit: AuditLog) -> Self {
        let rng = match cfg.rng_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            cfg,
            clock,
            audit,
            records: Mutex::new(HashMap::new()),
            rng: Mutex::new(rng),
            http: reqwest::Client::new(),
        }
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.cfg
    }

    fn new_request_id(&self) -> String {
        // 128-bit cryptographically random, string-encoded.
        let mut bytes = [0u8; 16];
        self.rng.lock().unwrap().fill_bytes(&mut bytes);
        URL_SAFE_NO_PAD.encode(bytes)
    }

    pub fn record(&self, request_id: &str) -> Option<RequestRecord> {
        self.records.lock().unwrap().get(request_id).cloned()
    }

    /// Captures the subject's prompt, mints a request ID, and returns the
    /// message forwarded to the principal (prompt byte-identical to the
    /// captured one).
    pub fn intercept_prompt(
        &self,
        subject_id: &str,
        prompt: &str,
    ) -> Result<ForwardedMessage, ProxyError> {
        if prompt.is_empty() {
            return Err(ProxyError::EmptyPrompt);
        }
        let request_id = self.new_request_id();
        let record = RequestRecord {
            request_id: request_id.clone(),
            original_prompt: prompt.to_string(),
            subject_id: subject_id.to_string(),
            created_at: self.clock.now_unix(),
            state: RecordState::Active,
            revocation_handle: None,
        };
        self.records
            .lock()
            .unwrap()
            .insert(request_id.clone(), record);
        self.audit.append(&serde_json::json!({
            "event": "prompt_intercepted",
            "request_id": request_id,
            "subject_id": subject_id,
            "at": self.clock.now_unix(),
        }));
        Ok(ForwardedMessage {
            request_id,
            prompt: prompt.to_string(),
        })
    }

    fn active_record(&self, request_id: &str) -> Result<RequestRecord, ProxyError> {
        let records = self.records.lock().unwrap();
        match records.get(request_id) {
            Some(r) if r.state == RecordState::Active => Ok(r.clone()),
            _ => Err(ProxyError::UnknownRequest),
        }
    }

    /// Auto-revokes active records past the task window. Called on every
    /// proxy entry point; also callable directly.
    pub async fn sweep_expired(&self) {
        let now = self.clock.now_unix();
        let expired: Vec<(String, Option<String>)> = {
            let mut records = self.records.lock().unwrap();
            let mut out = Vec::new();
            for record in records.values_mut() {
                if record.state == RecordState::Active
                    && now.saturating_sub(record.created_at) > self.cfg.max_task_secs
                {
                    record.state = RecordState::Revoked;
                    out.push((record.request_id.clone(), record.revocation_handle.clone()));
                }
            }
            out
        };
        for (request_id, handle) in expired {
            self.audit.append(&serde_json::json!({
                "event": "auto_revoked",
                "request_id": request_id,
                "at": now,
            }));
            if let Some(handle) = handle {
                let _ = self.upstream_revoke(&handle).await;
            }
        }
    }

    async fn upstream_revoke(&self, handle: &str) -> Result<(), ProxyError> {
        let url = format!("{}/revoke", self.cfg.as_base.trim_end_matches('/'));
        self.http
            .post(&url)
            .header(PROXY_SECRET_HEADER, &self.cfg.proxy_secret)
            .json(&serde_json::json!({"principal_id": "proxy", "handle": handle}))
            .send()
            .await
            .map_err(|e| ProxyError::Transport(e.to_string()))?;
        Ok(())
    }

    /// Relays the discovery request upstream without the request ID and
    /// returns the response unmodified (5xx bodies are replaced with an
    /// `upstream_error` marker, status preserved).
    pub async fn proxy_metadata_request(
        &self,
        request_id: &str,
        target_url: Option<&str>,
    ) -> Result<Relayed, ProxyError> {
        self.active_record(request_id)?;
        let base = self.cfg.as_base.trim_end_matches('/');
        let url = match target_url {
            Some(url) => {
                if !url.starts_with(base) {
                    return Err(ProxyError::ForeignUpstream(url.to_string()));
                }
                url.to_string()
            }
            None => format!("{base}/.well-known/oauth-authorization-server"),
        };
        let response = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|e| ProxyError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body: serde_json::Value = if response.status().is_server_error() {
            serde_json::json!({"error": "upstream_error", "upstream_status": status})
        } else {
            response.json().await.unwrap_or(serde_json::Value::Null)
        };
        self.audit.append(&serde_json::json!({
            "event": "metadata_brokered",
            "request_id": request_id,
            "upstream_status": status,
            "at": self.clock.now_unix(),
        }));
        Ok(Relayed { status, body })
    }

    /// Builds the upstream authorization request: the agent's scopes and
    /// PKCE challenge plus the stored original prompt, with the request ID
    /// removed. The relayed response is tagged with the request ID.
    pub async fn proxy_authorization_request(
        &self,
        body: &AgentAuthorizeBody,
    ) -> Result<Relayed, ProxyError> {
        let record = self.active_record(&body.request_id)?;
        if body.prompt.is_some() {
            self.audit.append(&serde_json::json!({
                "event": "prompt_tamper_attempt",
                "request_id": body.request_id,
                "at": self.clock.now_unix(),
            }));
            if self.cfg.strict_prompt_mode {
                return Err(ProxyError::PromptTampered);
            }
        }
        let upstream_body = serde_json::json!({
            "principal_id": body.principal_id,
            "scopes": body.scopes,
            "code_challenge": body.code_challenge,
            "code_challenge_method": body.code_challenge_method,
            "original_prompt": record.original_prompt,
        });
        let url = format!("{}/authorize", self.cfg.as_base.trim_end_matches('/'));
        let response = self
            .http
            .post(&url)
            .header(PROXY_SECRET_HEADER, &self.cfg.proxy_secret)
            .json(&upstream_body)
            .send()
            .await
            .map_err(|e| ProxyError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let response_body: serde_json::Value =
            response.json().await.unwrap_or(serde_json::Value::Null);

        if status == 200 {
            if let Some(handle) = response_body["revocation_handle"].as_str() {
                let mut records = self.records.lock().unwrap();
                if let Some(record) = records.get_mut(&body.request_id) {
                    record.revocation_handle = Some(handle.to_string());
                }
            }
        }
        self.audit.append(&serde_json::json!({
            "event": "authorize_brokered",
            "request_id": body.request_id,
            "principal_id": body.principal_id,
            "scopes": body.scopes,
            "upstream_status": status,
            "at": self.clock.now_unix(),
        }));
        Ok(Relayed {
            status,
            body: serde_json::json!({
                "request_id": body.request_id,
                "upstream_status": status,
                "response": response_body,
            }),
        })
    }

    /// Opaque relay of the code-for-token exchange. The code verifier
    /// passes through and is never logged.
    pub async fn proxy_token_request(
        &self,
        request_id: &str,
        code: &str,
        code_verifier: &str,
    ) -> Result<Relayed, ProxyError> {
        self.active_record(request_id)?;
        let url = format!("{}/token", self.cfg.as_base.trim_end_matches('/'));
        let response = self
            .http
            .post(&url)
            .json(&serde_json::json!({
                "grant_type": "authorization_code",
                "code": code,
                "code_verifier": code_verifier,
            }))
            .send()
            .await
            .map_err(|e| ProxyError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let response_body: serde_json::Value =
            response.json().await.unwrap_or(serde_json::Value::Null);
        self.audit.append(&serde_json::json!({
            "event": "token_brokered",
            "request_id": request_id,
            "upstream_status": status,
            "at": self.clock.now_unix(),
        }));
        Ok(Relayed {
            status,
            body: serde_json::json!({
                "request_id": request_id,
                "upstream_status": status,
                "response": response_body,
            }),
        })
    }

    /// Finalizes the request: the record leaves the active state, the
    /// associated handle is revoked upstream (once), and subsequent
    /// proxied calls with this ID fail. Unknown or already-finalized IDs
    /// acknowledge as a no-op.
    pub async fn finalize_request(&self, request_id: &str) -> bool {
        let handle = {
            let mut records = self.records.lock().unwrap();
            match records.get_mut(request_id) {
                Some(record) if record.state == RecordState::Active => {
                    record.state = RecordState::Finalized;
                    record.revocation_handle.clone()
                }
                _ => return true, // no-op ack
            }
        };
        self.audit.append(&serde_json::json!({
            "event": "finalized",
            "request_id": request_id,
            "at": self.clock.now_unix(),
        }));
        if let Some(handle) = handle {
            if let Err(e) = self.upstream_revoke(&handle).await {
                tracing::warn!(error = %e, "revocation call failed during finalize");
            }
        }
        true
    }
}
