//! In-process environment: spins the authorization server, trusted proxy,
//! and resource server on ephemeral localhost ports, sharing one registry,
//! signing key, clock, and revocation list.

use std::sync::Arc;

use axum::Router;
use tokio::task::JoinHandle;

use crate::audit::AuditLog;
use crate::authz::{self, AuthzConfig, AuthzMode, AuthzServer, WireTap};
use crate::clock::Clock;
use crate::domain::{McpServerManifest, ToolDescriptor, ToolRegistry};
use crate::matchers::ScopeMatcher;
use crate::proxy::{self, ProxyConfig, TrustedProxy};
use crate::resource::{self, ResourceConfig, ResourceServer};

/// Binds an ephemeral port and serves the router until dropped.
pub async fn serve_router(router: Router) -> (String, JoinHandle<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .expect("bind ephemeral port");
    let addr = listener.local_addr().expect("local addr");
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "test server exited");
        }
    });
    (format!("http://{addr}"), handle)
}

/// Built-in two-server registry used by the flow driver when no manifest
/// directory is supplied.
pub fn builtin_registry() -> ToolRegistry {
    let azure = McpServerManifest::new(
        "azure",
        vec![
            ToolDescriptor::new(
                "azure",
                "search_service_list",
                "Enumerate the search services available under a given subscription",
            )
            .unwrap(),
            ToolDescriptor::new(
                "azure",
                "subscription_list",
                "List every subscription identifier attached to the tenant billing account",
            )
            .unwrap(),
            ToolDescriptor::new(
                "azure",
                "storage_account_keys",
                "Fetch primary and secondary storage account access keys",
            )
            .unwrap(),
            ToolDescriptor::new(
                "azure",
                "vm_start",
                "Start a stopped virtual machine by resource id",
            )
            .unwrap(),
        ],
        "en",
    )
    .unwrap();
    let wiki = McpServerManifest::new(
        "wiki",
        vec![
            ToolDescriptor::new("wiki", "get_page", "Fetch a wiki page by exact title").unwrap(),
            ToolDescriptor::new("wiki", "search_pages", "Full text search across wiki pages")
                .unwrap(),
        ],
        "en",
    )
    .unwrap();
    ToolRegistry::from_manifests([azure, wiki]).unwrap()
}

/// Knobs for one spun-up environment.
pub struct EnvConfig {
    pub registry: Arc<ToolRegistry>,
    pub matcher: Arc<dyn ScopeMatcher>,
    pub clock: Arc<dyn Clock>,
    pub mode: AuthzMode,
    pub strict_scope_mode: bool,
    pub seed: u64,
    pub authz_audit: AuditLog,
    pub proxy_audit: AuditLog,
}

impl EnvConfig {
    pub fn new(matcher: Arc<dyn ScopeMatcher>, clock: Arc<dyn Clock>) -> Self {
        Self {
            registry: Arc::new(builtin_registry()),
            matcher,
            clock,
            mode: AuthzMode::Semantic,
            strict_scope_mode: false,
            seed: 7,
            authz_audit: AuditLog::discard(),
            proxy_audit: AuditLog::discard(),
        }
    }

    /// Static policy allowing every registered scope (the baseline server).
    pub fn static_mode(mut self) -> Self {
        self.mode = AuthzMode::Static {
            allowed_scopes: self.registry.all_scopes().into_iter().collect(),
        };
        self
    }
}

/// Live environment handles. Servers run until the handles are aborted or
/// the runtime shuts down.
pub struct TestEnv {
    pub as_base: String,
    pub proxy_base: String,
    pub rs_base: String,
    pub authz: Arc<AuthzServer>,
    pub proxy: Arc<TrustedProxy>,
    pub resource: Arc<ResourceServer>,
    pub registry: Arc<ToolRegistry>,
    pub tap: WireTap,
    pub handles: Vec<JoinHandle<()>>,
}

impl TestEnv {
    pub async fn spawn(cfg: EnvConfig) -> Self {
        let proxy_secret = "proxy-shared-secret";

        let mut authz_cfg = AuthzConfig::example_fixture();
        authz_cfg.proxy_secret = proxy_secret.to_string();
        authz_cfg.mode = cfg.mode.clone();
        authz_cfg.strict_scope_mode = cfg.strict_scope_mode;
        authz_cfg.rng_seed = Some(cfg.seed);
        let authz = Arc::new(
            AuthzServer::new(
                authz_cfg,
                Arc::clone(&cfg.registry),
                Arc::clone(&cfg.matcher),
                Arc::clone(&cfg.clock),
                cfg.authz_audit.clone(),
            )
            .expect("authz config valid"),
        );
        let tap: WireTap = Default::default();
        let (as_base, as_handle) =
            serve_router(authz::router_with_tap(Arc::clone(&authz), Arc::clone(&tap))).await;

        let mut rs_cfg = ResourceConfig::example_fixture();
        rs_cfg.fronted_servers = cfg.registry.server_ids().map(String::from).collect();
        rs_cfg.verify_key = authz.signing_key().to_vec();
        let resource = Arc::new(ResourceServer::new(
            rs_cfg,
            Arc::clone(&cfg.registry),
            Arc::clone(&cfg.clock),
            authz.revocation_list(),
        ));
        let (rs_base, rs_handle) = serve_router(resource::router(Arc::clone(&resource))).await;

        let mut proxy_cfg = ProxyConfig::new(as_base.clone(), proxy_secret);
        proxy_cfg.rng_seed = Some(cfg.seed.wrapping_add(1));
        let proxy = Arc::new(TrustedProxy::new(
            proxy_cfg,
            Arc::clone(&cfg.clock),
            cfg.proxy_audit.clone(),
        ));
        let (proxy_base, proxy_handle) = serve_router(proxy::router(Arc::clone(&proxy))).await;

        Self {
            as_base,
            proxy_base,
            rs_base,
            authz,
            proxy,
            resource,
            registry: cfg.registry,
            tap,
            handles: vec![as_handle, rs_handle, proxy_handle],
        }
    }

    pub fn flow_env(&self, seed: u64) -> super::FlowEnv {
        super::FlowEnv {
            rs_base: self.rs_base.clone(),
            as_base: self.as_base.clone(),
            proxy_base: Some(self.proxy_base.clone()),
            resource_id: "resource1".into(),
            principal_id: "agent-mcp-client-1".into(),
            subject_id: "subject-1".into(),
            seed,
        }
    }

    pub fn shutdown(&self) {
        for handle in &self.handles {
            handle.abort();
        }
    }
}
