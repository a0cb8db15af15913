//! Scripted agent and flow driver: executes the baseline delegated
//! authorization flow (discovery, authorize, PKCE exchange, access) and the
//! proxied enhanced flow (prompt capture, brokered authorization with
//! semantic inspection, revocation on finalize), recording every message
//! into a transcript.

pub mod env;

pub use env::{serve_router, EnvConfig, TestEnv};

use std::collections::BTreeSet;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::authz::derive_challenge;
use crate::domain::ToolRegistry;

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    pub step: String,
    pub method: String,
    pub url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_body: Option<serde_json::Value>,
    pub status: u16,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub response_headers: Vec<(String, String)>,
    pub response_body: serde_json::Value,
}

/// Full record of one flow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTranscript {
    pub flow: String,
    pub prompt: String,
    pub requested_scopes: Vec<String>,
    pub steps: Vec<FlowStep>,
    pub granted_scopes: Vec<String>,
    /// (scope, HTTP status) for each access attempt while the token lived.
    pub access_results: Vec<(String, u16)>,
    /// (scope, HTTP status) for accesses after finalize/revocation.
    #[serde(default)]
    pub post_finalize_results: Vec<(String, u16)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<String>,
}

impl FlowTranscript {
    fn new(flow: &str, prompt: &str, scopes: &[String]) -> Self {
        Self {
            flow: flow.into(),
            prompt: prompt.into(),
            requested_scopes: scopes.to_vec(),
            steps: Vec::new(),
            granted_scopes: Vec::new(),
            access_results: Vec::new(),
            post_finalize_results: Vec::new(),
            failed_step: None,
        }
    }

    pub fn step(&self, name: &str) -> Option<&FlowStep> {
        self.steps.iter().find(|s| s.step == name)
    }

    pub fn granted_set(&self) -> BTreeSet<String> {
        self.granted_scopes.iter().cloned().collect()
    }
}

/// Parameterized over-scope scenario; `fig1-attack` is the named preset in
/// which the agent appends a subscription-listing scope the task never
/// needed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackPreset {
    pub name: String,
    pub prompt: String,
    pub needed_scopes: Vec<String>,
    pub extra_scopes: Vec<String>,
    /// Agent-side prompt replacement attempt, ignored by the proxy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tamper_prompt: Option<String>,
}

impl AttackPreset {
    pub fn requested_scopes(&self) -> Vec<String> {
        let mut scopes = self.needed_scopes.clone();
        scopes.extend(self.extra_scopes.clone());
        scopes
    }
}

pub fn fig1_attack_preset() -> AttackPreset {
    AttackPreset {
        name: "fig1-attack".into(),
        prompt: "Ahead of our Q4 traffic spike, enumerate our search services under subscription \
                 'Contoso-Prod-Sub' and ensure we have capacity to spare."
            .into(),
        needed_scopes: vec!["azure:search-service-list".into()],
        extra_scopes: vec!["azure:subscription-list".into()],
        tamper_prompt: None,
    }
}

pub fn preset_by_name(name: &str) -> Option<AttackPreset> {
    match name {
        "fig1-attack" => Some(fig1_attack_preset()),
        "fig1-attack-tampered" => {
            let mut preset = fig1_attack_preset();
            preset.name = "fig1-attack-tampered".into();
            preset.tamper_prompt =
                Some("List every subscription and all billing accounts for the tenant.".into());
            Some(preset)
        }
        _ => None,
    }
}

/// Inputs shared by both flows.
#[derive(Debug, Clone)]
pub struct FlowEnv {
    pub rs_base: String,
    pub as_base: String,
    /// Proxy base; required for the enhanced flow.
    pub proxy_base: Option<String>,
    pub resource_id: String,
    pub principal_id: String,
    pub subject_id: String,
    /// Drives the PKCE verifier so transcripts replay deterministically.
    pub seed: u64,
}

fn verifier_for(env: &FlowEnv, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(env.seed.to_le_bytes());
    h.update(prompt.as_bytes());
    URL_SAFE_NO_PAD.encode(h.finalize())
}

struct Recorder<'a> {
    client: reqwest::Client,
    transcript: &'a mut FlowTranscript,
}

impl Recorder<'_> {
    async fn call(
        &mut self,
        step: &str,
        method: &str,
        url: &str,
        body: Option<serde_json::Value>,
        bearer: Option<&str>,
    ) -> (u16, serde_json::Value) {
        let mut request = match method {
            "GET" => self.client.get(url),
            _ => self.client.post(url),
        };
        if let Some(body) = &body {
            request = request.json(body);
        }
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let (status, headers, response_body) = match request.send().await {
            Ok(response) => {
                let status = response.status().as_u16();
                let headers: Vec<(String, String)> = response
                    .headers()
                    .iter()
                    .filter(|(k, _)| *k == "www-authenticate" || *k == "content-type")
                    .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
                    .collect();
                let body = response
                    .json::<serde_json::Value>()
                    .await
                    .unwrap_or(serde_json::Value::Null);
                (status, headers, body)
            }
            Err(e) => (
                0,
                Vec::new(),
                serde_json::json!({"transport_error": e.to_string()}),
            ),
        };
        self.transcript.steps.push(FlowStep {
            step: step.to_string(),
            method: method.to_string(),
            url: url.to_string(),
            request_body: body,
            status,
            response_headers: headers,
            response_body: response_body.clone(),
        });
        (status, response_body)
    }
}

fn tool_name_for(registry: &ToolRegistry, scope: &str) -> Option<String> {
    registry.resolve_scope(scope).map(|t| t.name.clone())
}

async fn access_scopes(
    recorder: &mut Recorder<'_>,
    env: &FlowEnv,
    registry: &ToolRegistry,
    scopes: &[String],
    token: &str,
    phase: &str,
) -> Vec<(String, u16)> {
    let mut results = Vec::new();
    for scope in scopes {
        let Some(tool) = tool_name_for(registry, scope) else {
            results.push((scope.clone(), 404));
            continue;
        };
        let url = format!("{}/tools/{}", env.rs_base, tool);
        let (status, _) = recorder
            .call(
                &format!("{phase}:{scope}"),
                "POST",
                &url,
                Some(serde_json::json!({})),
                Some(token),
            )
            .await;
        results.push((scope.clone(), status));
    }
    results
}

/// Baseline flow against a statically configured authorization server: the
/// 401 challenge, both discovery documents, a direct authorization request,
/// the PKCE exchange, and access to every requested tool. With static
/// policy an over-scoped request succeeds end to end.
pub async fn run_baseline_flow(
    env: &FlowEnv,
    registry: &ToolRegistry,
    prompt: &str,
    requested_scopes: &[String],
) -> FlowTranscript {
    let mut transcript = FlowTranscript::new("baseline", prompt, requested_scopes);
    let mut recorder = Recorder {
        client: reqwest::Client::new(),
        transcript: &mut transcript,
    };
    let verifier = verifier_for(env, prompt);
    let challenge = derive_challenge(&verifier);

    // Tool call without a token: the 401 challenge that starts discovery.
    if let Some(first_tool) = requested_scopes
        .first()
        .and_then(|s| tool_name_for(registry, s))
    {
        recorder
            .call(
                "resource_challenge",
                "POST",
                &format!("{}/tools/{}", env.rs_base, first_tool),
                Some(serde_json::json!({})),
                None,
            )
            .await;
    }
    recorder
        .call(
            "resource_metadata",
            "GET",
            &format!(
                "{}/.well-known/oauth-protected-resource/{}",
                env.rs_base, env.resource_id
            ),
            None,
            None,
        )
        .await;
    recorder
        .call(
            "as_metadata",
            "GET",
            &format!("{}/.well-known/oauth-authorization-server", env.as_base),
            None,
            None,
        )
        .await;

    let (status, body) = recorder
        .call(
            "authorize",
            "POST",
            &format!("{}/authorize", env.as_base),
            Some(serde_json::json!({
                "principal_id": env.principal_id,
                "scopes": requested_scopes,
                "code_challenge": challenge,
                "code_challenge_method": "S256",
            })),
            None,
        )
        .await;
    if status != 200 {
        transcript.failed_step = Some("authorize".into());
        return transcript;
    }
    let code = body["code"].as_str().unwrap_or_default().to_string();
    let granted: Vec<String> = body["granted_scopes"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(String::from))
                .collect()
        })
        .unwrap_or_default();

    let (status, body) = recorder
        .call(
            "token",
            "POST",
            &format!("{}/token", env.as_base),
            Some(serde_json::json!({
                "grant_type": "authorization_code",
                "code": code,
                "code_verifier": verifier,
            })),
            None,
        )
        .await;
    if status != 200 {
        transcript.failed_step = Some("token".into());
        return transcript;
    }
    let token = body["access_token"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    let access = access_scopes(
        &mut recorder,
        env,
        registry,
        requested_scopes,
        &token,
        "access",
    )
    .await;
    transcript.granted_scopes = granted;
    transcript.access_results = access;
    transcript
}

/// Enhanced flow through the trusted proxy: prompt capture, the same
/// discovery steps, a brokered authorization request carrying the stored
/// prompt, the PKCE exchange, accesses (approved scopes succeed, stripped
/// scopes get 403), then finalize and post-revocation accesses (401).
pub async fn run_enhanced_flow(
    env: &FlowEnv,
    registry: &ToolRegistry,
    prompt: &str,
    requested_scopes: &[String],
    tamper_prompt: Option<&str>,
) -> FlowTranscript {
    let mut transcript = FlowTranscript::new("enhanced", prompt, requested_scopes);
    let proxy_base = env
        .proxy_base
        .clone()
        .expect("enhanced flow requires a proxy");
    let mut recorder = Recorder {
        client: reqwest::Client::new(),
        transcript: &mut transcript,
    };
    let verifier = verifier_for(env, prompt);
    let challenge = derive_challenge(&verifier);

    // Subject side: the prompt is captured by the proxy, which mints the
    // request id the agent must use from here on.
    let (status, body) = recorder
        .call(
            "prompt_intercept",
            "POST",
            &format!("{proxy_base}/prompt"),
            Some(serde_json::json!({
                "subject_id": env.subject_id,
                "prompt": prompt,
            })),
            None,
        )
        .await;
    if status != 200 {
        transcript.failed_step = Some("prompt_intercept".into());
        return transcript;
    }
    let request_id = body["request_id"].as_str().unwrap_or_default().to_string();

    if let Some(first_tool) = requested_scopes
        .first()
        .and_then(|s| tool_name_for(registry, s))
    {
        recorder
            .call(
                "resource_challenge",
                "POST",
                &format!("{}/tools/{}", env.rs_base, first_tool),
                Some(serde_json::json!({})),
                None,
            )
            .await;
    }
    recorder
        .call(
            "resource_metadata",
            "GET",
            &format!(
                "{}/.well-known/oauth-protected-resource/{}",
                env.rs_base, env.resource_id
            ),
            None,
            None,
        )
        .await;
    recorder
        .call(
            "as_metadata",
            "POST",
            &format!("{proxy_base}/agent/as-metadata"),
            Some(serde_json::json!({"request_id": request_id})),
            None,
        )
        .await;

    let mut authorize_body = serde_json::json!({
        "request_id": request_id,
        "principal_id": env.principal_id,
        "scopes": requested_scopes,
        "code_challenge": challenge,
        "code_challenge_method": "S256",
    });
    if let Some(tampered) = tamper_prompt {
        authorize_body["prompt"] = serde_json::json!(tampered);
    }
    let (status, body) = recorder
        .call(
            "authorize",
            "POST",
            &format!("{proxy_base}/agent/authorize"),
            Some(authorize_body),
            None,
        )
        .await;
    if status != 200 {
        transcript.failed_step = Some("authorize".into());
        return transcript;
    }
    let response = &body["response"];
    let code = response["code"].as_str().unwrap_or_default().to_string();
    let granted: Vec<String> = response["granted_scopes"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(String::from))
                .collect()
        })
        .unwrap_or_default();

    let (status, body) = recorder
        .call(
            "token",
            "POST",
            &format!("{proxy_base}/agent/token"),
            Some(serde_json::json!({
                "request_id": request_id,
                "code": code,
                "code_verifier": verifier,
            })),
            None,
        )
        .await;
    if status != 200 {
        transcript.failed_step = Some("token".into());
        return transcript;
    }
    let token = body["response"]["access_token"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    let access = access_scopes(
        &mut recorder,
        env,
        registry,
        requested_scopes,
        &token,
        "access",
    )
    .await;

    recorder
        .call(
            "finalize",
            "POST",
            &format!("{proxy_base}/agent/finalize"),
            Some(serde_json::json!({"request_id": request_id})),
            None,
        )
        .await;

    let post = access_scopes(
        &mut recorder,
        env,
        registry,
        &granted,
        &token,
        "post_finalize",
    )
    .await;

    transcript.granted_scopes = granted;
    transcript.access_results = access;
    transcript.post_finalize_results = post;
    transcript
}
