//! Delegated authorization for tool-calling agents, constrained by semantic
//! task-to-scope matching, together with the ASTRA dataset pipeline and the
//! evaluation harness that benchmarks the matchers.
//!
//! The crate is organized around the flow in which it is used:
//!
//! - [`domain`]: tools, manifests, task samples, match requests/decisions,
//!   and canonical scope naming.
//! - [`gateway`]: chat/embedding backends (mock, HTTP, record/replay).
//! - [`matchers`]: the similarity matcher, the reasoning matcher, per-set
//!   matching, and threshold calibration.
//! - [`pipeline`]: manifest ingestion, task generation, match simulation,
//!   Toucan-format preprocessing, and server-disjoint splitting.
//! - [`eval`]: confusion metrics and report rendering.
//! - [`authz`], [`proxy`], [`resource`]: the authorization server, the
//!   trusted proxy, and the simulated resource server.
//! - [`e2e`]: scripted baseline/enhanced delegated-authorization flows.

pub mod audit;
pub mod authz;
pub mod cli;
pub mod clock;
pub mod config;
pub mod domain;
pub mod e2e;
pub mod eval;
pub mod gateway;
pub mod matchers;
pub mod pipeline;
pub mod prompts;
pub mod proxy;
pub mod resource;

pub use domain::{
    canonical_scope, DatasetConfig, DomainError, MatchDecision, MatchLabel, MatchRequest,
    MatcherId, McpServerManifest, SampleSource, TaskSample, ToolDescriptor, ToolRegistry,
};
pub use gateway::{ChatRequest, EmbeddingVector, Gateway, GatewayError, MockGateway};
