//! Simulated resource/MCP server: protected-resource metadata discovery,
//! 401 bearer challenge, and bearer-token-gated tool invocation backed by
//! canned fixture results.

pub mod http;

pub use http::router;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::authz::{verify_token, Claims, RevocationList, TokenError};
use crate::clock::Clock;
use crate::domain::{ToolDescriptor, ToolRegistry};

/// Protected resource metadata document; field names and order follow the
/// discovery format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedResourceMetadata {
    pub resource: String,
    pub authorization_servers: Vec<String>,
    pub bearer_methods_supported: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scopes_supported: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource_documentation: Option<String>,
}

/// Structural validation against the discovery-format schema.
pub fn validate_resource_metadata(value: &serde_json::Value) -> Result<(), String> {
    let obj = value.as_object().ok_or("metadata must be an object")?;
    let str_field = |name: &str| -> Result<(), String> {
        obj.get(name)
            .and_then(|v| v.as_str())
            .map(|_| ())
            .ok_or_else(|| format!("missing or non-string field {name:?}"))
    };
    str_field("resource")?;
    let servers = obj
        .get("authorization_servers")
        .and_then(|v| v.as_array())
        .ok_or("missing authorization_servers array")?;
    if servers.is_empty() || !servers.iter().all(|s| s.is_string()) {
        return Err("authorization_servers must be a non-empty string array".into());
    }
    let methods = obj
        .get("bearer_methods_supported")
        .and_then(|v| v.as_array())
        .ok_or("missing bearer_methods_supported array")?;
    for method in methods {
        match method.as_str() {
            Some("header") | Some("body") => {}
            _ => return Err(format!("unsupported bearer method {method}")),
        }
    }
    if let Some(scopes) = obj.get("scopes_supported") {
        let ok = scopes
            .as_array()
            .is_some_and(|a| a.iter().all(|s| s.is_string()));
        if !ok {
            return Err("scopes_supported must be a string array".into());
        }
    }
    if let Some(doc) = obj.get("resource_documentation") {
        if !doc.is_string() {
            return Err("resource_documentation must be a string".into());
        }
    }
    Ok(())
}

/// One registered resource path component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceEntry {
    pub id: String,
    pub authorization_servers: Vec<String>,
    #[serde(default)]
    pub scopes_supported: Option<Vec<String>>,
    #[serde(default = "default_bearer_methods")]
    pub bearer_methods_supported: Vec<String>,
    #[serde(default)]
    pub resource_documentation: Option<String>,
}

fn default_bearer_methods() -> Vec<String> {
    vec!["header".into(), "body".into()]
}

#[derive(Debug, Clone)]
pub struct ResourceConfig {
    /// External base URL used in metadata and the challenge header.
    pub base_url: String,
    pub resources: Vec<ResourceEntry>,
    /// Server ids (from the registry) whose tools this resource fronts.
    pub fronted_servers: Vec<String>,
    pub verify_key: Vec<u8>,
}

impl ResourceConfig {
    /// Discovery-example fixture used by the metadata golden tests.
    pub fn example_fixture() -> Self {
        Self {
            base_url: "https://resource.example.com".into(),
            resources: vec![ResourceEntry {
                id: "resource1".into(),
                authorization_servers: vec![
                    "https://as1.example.com".into(),
                    "https://as2.example.net".into(),
                ],
                scopes_supported: Some(vec!["scope1".into(), "scope7".into(), "scope19".into()]),
                bearer_methods_supported: default_bearer_methods(),
                resource_documentation: Some(
                    "https://resource.example.com/resource1/resource_documentation.html".into(),
                ),
            }],
            fronted_servers: Vec::new(),
            verify_key: b"fixture-signing-key".to_vec(),
        }
    }
}

/// Result of a gated tool invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum AccessOutcome {
    Ok(serde_json::Value),
    /// Missing/invalid/expired/revoked token: answer with the uniform 401
    /// challenge.
    Unauthorized,
    /// Valid token lacking the tool's scope.
    InsufficientScope {
        needed: String,
    },
    UnknownTool,
}

pub struct ResourceServer {
    cfg: ResourceConfig,
    registry: Arc<ToolRegistry>,
    clock: Arc<dyn Clock>,
    revocations: Arc<RevocationList>,
    fixtures: BTreeMap<String, serde_json::Value>,
}

impl ResourceServer {
    pub fn new(
        cfg: ResourceConfig,
        registry: Arc<ToolRegistry>,
        clock: Arc<dyn Clock>,
        revocations: Arc<RevocationList>,
    ) -> Self {
        Self {
            cfg,
            registry,
            clock,
            revocations,
            fixtures: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ResourceConfig {
        &self.cfg
    }

    /// Canned result served when the named scope's tool is invoked.
    pub fn set_fixture(&mut self, scope: impl Into<String>, result: serde_json::Value) {
        self.fixtures.insert(scope.into(), result);
    }

    /// Exact challenge header value for unauthenticated requests.
    pub fn challenge_header(&self) -> String {
        format!(
            "Bearer resource_metadata=\"{}/.well-known/oauth-protected-resource\"",
            self.cfg.base_url.trim_end_matches('/')
        )
    }

    pub fn metadata(&self, resource_id: &str) -> Option<ProtectedResourceMetadata> {
        let entry = self.cfg.resources.iter().find(|r| r.id == resource_id)?;
        Some(ProtectedResourceMetadata {
            resource: format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), entry.id),
            authorization_servers: entry.authorization_servers.clone(),
            bearer_methods_supported: entry.bearer_methods_supported.clone(),
            scopes_supported: entry.scopes_supported.clone(),
            resource_documentation: entry.resource_documentation.clone(),
        })
    }

    fn resolve_tool(&self, tool_name: &str) -> Option<&ToolDescriptor> {
        for server_id in &self.cfg.fronted_servers {
            if let Some(manifest) = self.registry.manifest(server_id) {
                if let Some(tool) = manifest.tool_by_name(tool_name) {
                    return Some(tool);
                }
            }
        }
        None
    }

    fn check_token(&self, token: &str) -> Result<Claims, TokenError> {
        let claims = verify_token(token, &self.cfg.verify_key, self.clock.now_unix())?;
        if self.revocations.is_revoked(&claims.jti) {
            return Err(TokenError::Expired);
        }
        Ok(claims)
    }

    /// Verifies signature, expiry, revocation, and scope coverage, then
    /// returns the tool's canned result.
    pub fn access_resource(
        &self,
        token: Option<&str>,
        tool_name: &str,
        args: &serde_json::Value,
    ) -> AccessOutcome {
        let Some(tool) = self.resolve_tool(tool_name) else {
            return AccessOutcome::UnknownTool;
        };
        let Some(token) = token else {
            return AccessOutcome::Unauthorized;
        };
        let claims = match self.check_token(token) {
            Ok(claims) => claims,
            Err(_) => return AccessOutcome::Unauthorized,
        };
        if !claims.has_scope(&tool.scope) {
            return AccessOutcome::InsufficientScope {
                needed: tool.scope.clone(),
            };
        }
        let result = self.fixtures.get(&tool.scope).cloned().unwrap_or_else(|| {
            serde_json::json!({
                "tool": tool.name,
                "scope": tool.scope,
                "server_id": tool.server_id,
                "result": "ok",
                "args": args,
            })
        });
        AccessOutcome::Ok(result)
    }
}

/// Polls an authorization server's `/revocations` endpoint into a shared
/// list; used when the resource server runs in its own process.
pub fn spawn_revocation_poller(
    as_base: String,
    list: Arc<RevocationList>,
    period: Duration,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let client = match reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
        {
            Ok(c) => c,
            Err(e) => {
                tracing::error!(error = %e, "revocation poller could not build client");
                return;
            }
        };
        loop {
            let url = format!("{}/revocations", as_base.trim_end_matches('/'));
            match client
                .get(&url)
                .send()
                .and_then(|r| r.json::<serde_json::Value>())
            {
                Ok(body) => {
                    let handles: Vec<String> = body["revoked"]
                        .as_array()
                        .map(|a| {
                            a.iter()
                                .filter_map(|v| v.as_str().map(String::from))
                                .collect()
                        })
                        .unwrap_or_default();
                    list.replace(handles);
                }
                Err(e) => tracing::warn!(error = %e, "revocation poll failed"),
            }
            std::thread::sleep(period);
        }
    })
}
