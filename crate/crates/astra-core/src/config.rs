//! TOML application config: one documented key per tunable policy knob,
//! with flag and environment overrides applied by the CLI.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::ToolRegistry;
use crate::gateway::{CassetteGateway, Gateway, HttpGateway, HttpGatewayConfig, MockGateway};
use crate::matchers::{
    EchoMatcher, LlmResMatcher, MockScopeMatcher, ScopeMatcher, SemSimConfig, SemSimMatcher,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub gateway: GatewaySection,
    pub matcher: MatcherSection,
    pub pipeline: PipelineSection,
    pub authz: AuthzSection,
    pub proxy: ProxySection,
    pub resource: ResourceSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            gateway: GatewaySection::default(),
            matcher: MatcherSection::default(),
            pipeline: PipelineSection::default(),
            authz: AuthzSection::default(),
            proxy: ProxySection::default(),
            resource: ResourceSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// "mock" | "http" | "replay" | "record"
    pub backend: String,
    /// Cassette path for record/replay backends.
    pub cassette: Option<String>,
    pub rate_limit_rps: Option<f64>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            backend: "mock".into(),
            cassette: None,
            rate_limit_rps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherSection {
    /// "semsim" | "llmres" | "echo" | "mock"
    pub kind: String,
    pub threshold: f64,
    /// Whether the threshold came from calibration.
    pub calibrated: bool,
    /// "server" | "global": tool list the similarity matcher compares
    /// against.
    pub available_scope: String,
    /// Scopes the mock matcher denies.
    pub deny_scopes: Vec<String>,
}

impl Default for MatcherSection {
    fn default() -> Self {
        Self {
            kind: "llmres".into(),
            threshold: 0.5,
            calibrated: false,
            available_scope: "server".into(),
            deny_scopes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub tasks_per_set: u32,
    pub wrong_ratio: f64,
    pub null_ratio: f64,
    pub val_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            tasks_per_set: 3,
            wrong_ratio: 0.8,
            null_ratio: 0.2,
            val_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthzSection {
    pub listen: String,
    pub issuer: String,
    pub grant_ttl_secs: u64,
    pub token_ttl_secs: u64,
    pub strict_scope_mode: bool,
    pub proxy_secret: String,
    pub signing_key: String,
    /// "semantic" | "static"
    pub mode: String,
    pub allowed_scopes: Vec<String>,
    pub scopes_supported: Vec<String>,
    pub audit_log: Option<String>,
}

impl Default for AuthzSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8081".into(),
            issuer: "https://server.example.com".into(),
            grant_ttl_secs: 60,
            token_ttl_secs: 300,
            strict_scope_mode: false,
            proxy_secret: "proxy-shared-secret".into(),
            signing_key: "dev-signing-key".into(),
            mode: "semantic".into(),
            allowed_scopes: Vec::new(),
            scopes_supported: vec!["scope1".into(), "scope7".into(), "scope19".into()],
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    pub listen: String,
    pub as_base: String,
    pub max_task_secs: u64,
    pub strict_prompt_mode: bool,
    pub audit_log: Option<String>,
}

impl Default for ProxySection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8082".into(),
            as_base: "http://127.0.0.1:8081".into(),
            max_task_secs: 900,
            strict_prompt_mode: false,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceSection {
    pub listen: String,
    pub base_url: String,
    /// Poll this authorization server's revocation list (multi-process
    /// mode). Leave empty in single-binary setups.
    pub as_base: Option<String>,
    pub poll_period_ms: u64,
    /// Server ids fronted by this resource; empty means every registry
    /// server.
    pub fronted_servers: Vec<String>,
}

impl Default for ResourceSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8083".into(),
            base_url: "https://resource.example.com".into(),
            as_base: None,
            poll_period_ms: 1_000,
            fronted_servers: Vec::new(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let cfg: AppConfig = toml::from_str(&body).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if (self.pipeline.wrong_ratio + self.pipeline.null_ratio - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(
                "pipeline.wrong_ratio + pipeline.null_ratio must equal 1.0".into(),
            ));
        }
        if !(0.0 < self.pipeline.val_fraction && self.pipeline.val_fraction < 1.0) {
            return Err(ConfigError::Invalid(
                "pipeline.val_fraction must be in (0, 1)".into(),
            ));
        }
        match self.gateway.backend.as_str() {
            "mock" | "http" => {}
            "replay" | "record" => {
                if self.gateway.cassette.is_none() {
                    return Err(ConfigError::Invalid(
                        "gateway.cassette required for record/replay backends".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "gateway.backend {other:?} unknown"
                )))
            }
        }
        Ok(())
    }

    /// Builds the configured gateway. `live` forces the HTTP backend from
    /// the LM_* environment variables.
    pub fn build_gateway(&self, live: bool) -> Result<Arc<dyn Gateway>, crate::GatewayError> {
        if live {
            let mut http_cfg = HttpGatewayConfig::from_env()?;
            http_cfg.rate_limit_rps = self.gateway.rate_limit_rps;
            return Ok(Arc::new(HttpGateway::new(http_cfg)?));
        }
        match self.gateway.backend.as_str() {
            "http" => {
                let mut http_cfg = HttpGatewayConfig::from_env()?;
                http_cfg.rate_limit_rps = self.gateway.rate_limit_rps;
                Ok(Arc::new(HttpGateway::new(http_cfg)?))
            }
            "replay" => {
                let path = self.gateway.cassette.as_deref().unwrap_or("cassette.jsonl");
                Ok(Arc::new(CassetteGateway::replay(Path::new(path))?))
            }
            "record" => {
                let mut http_cfg = HttpGatewayConfig::from_env()?;
                http_cfg.rate_limit_rps = self.gateway.rate_limit_rps;
                let inner = Arc::new(HttpGateway::new(http_cfg)?);
                let path = self.gateway.cassette.as_deref().unwrap_or("cassette.jsonl");
                Ok(Arc::new(CassetteGateway::record(inner, Path::new(path))?))
            }
            _ => Ok(Arc::new(MockGateway::new(self.seed))),
        }
    }

    pub fn semsim_config(&self) -> SemSimConfig {
        SemSimConfig {
            threshold: self.matcher.threshold,
            embed_model: "mock-embed-256".into(),
            calibrated: self.matcher.calibrated,
        }
    }

    /// Builds the configured matcher over a registry and gateway.
    pub fn build_matcher(
        &self,
        kind: &str,
        registry: Arc<ToolRegistry>,
        gateway: Arc<dyn Gateway>,
    ) -> Result<Arc<dyn ScopeMatcher>, ConfigError> {
        use crate::matchers::semsim::AvailableScope;
        match kind {
            "semsim" => {
                let scope = match self.matcher.available_scope.as_str() {
                    "global" => AvailableScope::Global,
                    _ => AvailableScope::Server,
                };
                Ok(Arc::new(
                    SemSimMatcher::new(gateway, registry, self.semsim_config())
                        .with_available_scope(scope),
                ))
            }
            "llmres" => Ok(Arc::new(LlmResMatcher::new(gateway))),
            "echo" => Ok(Arc::new(EchoMatcher)),
            "mock" => Ok(Arc::new(MockScopeMatcher::denying(
                self.matcher.deny_scopes.clone(),
            ))),
            other => Err(ConfigError::Invalid(format!(
                "matcher kind {other:?} unknown"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        AppConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let toml_body = r#"
            seed = 99
            [matcher]
            kind = "semsim"
            threshold = 0.42
            calibrated = true
            [pipeline]
            wrong_ratio = 0.7
            null_ratio = 0.3
        "#;
        let cfg: AppConfig = toml::from_str(toml_body).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.matcher.threshold, 0.42);
        assert_eq!(cfg.pipeline.wrong_ratio, 0.7);
        // Unspecified sections fall back to defaults.
        assert_eq!(cfg.authz.token_ttl_secs, 300);
    }

    #[test]
    fn bad_ratio_rejected() {
        let cfg: AppConfig = toml::from_str("[pipeline]\nwrong_ratio = 0.9\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<AppConfig>("[matcher]\nthresholdd = 0.5\n").is_err());
    }

    #[test]
    fn unknown_matcher_kind_rejected() {
        let cfg = AppConfig::default();
        let registry = Arc::new(ToolRegistry::new());
        let gateway: Arc<dyn Gateway> = Arc::new(MockGateway::new(1));
        assert!(cfg.build_matcher("nope", registry, gateway).is_err());
    }
}
