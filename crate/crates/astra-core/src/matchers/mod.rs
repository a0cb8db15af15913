//! Semantic task-to-scope matching.
//!
//! Two production matchers: the embedding similarity matcher ([`semsim`])
//! and the LLM reasoning matcher ([`llmres`]), plus per-tool set matching
//! and threshold calibration. `Echo` and `Mock` matchers back the oracle
//! and flow tests.

pub mod calibrate;
pub mod llmres;
pub mod semsim;

pub use calibrate::{calibrate_from_points, calibrate_threshold, CalibrationPoint};
pub use llmres::{llm_res_match, parse_boolean_flag, LlmResMatcher};
pub use semsim::{
    cosine_similarity, extract_tool_description, generate_ideal_tool_description, semsim_match,
    SemSimMatcher,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MatchDecision, MatcherId, TaskSample, ToolDescriptor};
use crate::gateway::GatewayError;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("requested tool {scope:?} is not in the available set")]
    ToolNotRegistered { scope: String },
    #[error("similarity matching only supports single-tool tasks (task has {n_tools})")]
    UnsupportedTaskArity { n_tools: u8 },
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot take cosine of a zero vector")]
    ZeroVector,
    #[error("completion carries no <tool_assistant> block")]
    IdealDescriptionParse,
    #[error("matcher could not produce a boolean flag after reprompt")]
    Indecision,
    #[error("calibration set contains a single class only")]
    CalibrationUnderdetermined,
    #[error("requested scope list is empty")]
    EmptyRequest,
    #[error("requested scope {scope:?} appears more than once")]
    DuplicateScope { scope: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Similarity matcher configuration. The default threshold is a placeholder;
/// run calibration (or set it explicitly) before trusting decisions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemSimConfig {
    pub threshold: f64,
    pub embed_model: String,
    /// False until the threshold came from calibration or explicit config.
    pub calibrated: bool,
}

impl Default for SemSimConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            embed_model: "mock-embed-256".to_string(),
            calibrated: false,
        }
    }
}

impl SemSimConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            calibrated: true,
            ..Self::default()
        }
    }
}

/// Outcome of matching a whole requested scope set against one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScopeGrantResult {
    /// Per-requested-tool decisions, in request order.
    pub per_tool: Vec<(String, MatchDecision)>,
    /// Scopes whose decision was `appropriate`.
    pub granted_scopes: BTreeSet<String>,
    /// True iff every requested tool was approved.
    pub fully_granted: bool,
}

/// A task-to-scope matcher: one decision per (task, requested tool) pair.
///
/// Implementations are stateless given their gateway and are safe to share
/// across threads.
pub trait ScopeMatcher: Send + Sync {
    fn id(&self) -> MatcherId;

    fn decide(
        &self,
        task: &TaskSample,
        requested: &ToolDescriptor,
    ) -> Result<MatchDecision, MatcherError>;
}

/// Runs the matcher once per requested tool. Per-tool errors become per-tool
/// denials annotated with the error; the set as a whole never aborts.
pub fn match_scope_set(
    task: &TaskSample,
    requested: &[ToolDescriptor],
    matcher: &dyn ScopeMatcher,
) -> Result<ScopeGrantResult, MatcherError> {
    if requested.is_empty() {
        return Err(MatcherError::EmptyRequest);
    }
    let mut seen = BTreeSet::new();
    for tool in requested {
        if !seen.insert(tool.scope.as_str()) {
            return Err(MatcherError::DuplicateScope {
                scope: tool.scope.clone(),
            });
        }
    }

    let mut per_tool = Vec::with_capacity(requested.len());
    let mut granted = BTreeSet::new();
    for tool in requested {
        let decision = match matcher.decide(task, tool) {
            Ok(decision) => decision,
            Err(err) => MatchDecision {
                appropriate: false,
                score: None,
                rationale: Some(format!("error: {err}")),
                matcher_id: matcher.id(),
            },
        };
        if decision.appropriate {
            granted.insert(tool.scope.clone());
        }
        per_tool.push((tool.scope.clone(), decision));
    }
    let fully_granted = per_tool.iter().all(|(_, d)| d.appropriate);
    Ok(ScopeGrantResult {
        per_tool,
        granted_scopes: granted,
        fully_granted,
    })
}

/// Ground-truth echo matcher: approves exactly the task's required tools.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoMatcher;

impl ScopeMatcher for EchoMatcher {
    fn id(&self) -> MatcherId {
        MatcherId::Echo
    }

    fn decide(
        &self,
        task: &TaskSample,
        requested: &ToolDescriptor,
    ) -> Result<MatchDecision, MatcherError> {
        Ok(MatchDecision::harness(
            MatcherId::Echo,
            task.requires_scope(&requested.scope),
            None,
        ))
    }
}

/// Scriptable matcher for flow tests: approves everything except an explicit
/// deny list, and errors on an explicit error list.
#[derive(Debug, Default, Clone)]
pub struct MockScopeMatcher {
    pub deny_scopes: BTreeSet<String>,
    pub error_scopes: BTreeSet<String>,
}

impl MockScopeMatcher {
    pub fn denying<I: IntoIterator<Item = S>, S: Into<String>>(scopes: I) -> Self {
        Self {
            deny_scopes: scopes.into_iter().map(Into::into).collect(),
            error_scopes: BTreeSet::new(),
        }
    }
}

impl ScopeMatcher for MockScopeMatcher {
    fn id(&self) -> MatcherId {
        MatcherId::Mock
    }

    fn decide(
        &self,
        _task: &TaskSample,
        requested: &ToolDescriptor,
    ) -> Result<MatchDecision, MatcherError> {
        if self.error_scopes.contains(&requested.scope) {
            return Err(MatcherError::Indecision);
        }
        Ok(MatchDecision::harness(
            MatcherId::Mock,
            !self.deny_scopes.contains(&requested.scope),
            None,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SampleSource;

    fn tool(server: &str, name: &str) -> ToolDescriptor {
        ToolDescriptor::new(server, name, format!("{name} description")).unwrap()
    }

    fn task(required: &[ToolDescriptor]) -> TaskSample {
        TaskSample::new(
            "t1",
            "do things",
            required.to_vec(),
            SampleSource::Generated,
        )
        .unwrap()
    }

    #[test]
    fn scope_set_conjunction() {
        let t1 = tool("azure", "search_service_list");
        let t2 = tool("azure", "storage_account_list");
        let task = task(&[t1.clone(), t2.clone()]);
        let result = match_scope_set(&task, &[t1, t2], &EchoMatcher).unwrap();
        assert!(result.fully_granted);
        assert_eq!(result.granted_scopes.len(), 2);
    }

    #[test]
    fn over_scoped_request_grants_only_matching_subset() {
        let needed = tool("azure", "search_service_list");
        let extra = tool("azure", "subscription_list");
        let task = task(std::slice::from_ref(&needed));
        let result = match_scope_set(&task, &[needed.clone(), extra], &EchoMatcher).unwrap();
        assert!(!result.fully_granted);
        assert_eq!(
            result.granted_scopes.iter().collect::<Vec<_>>(),
            vec!["azure:search-service-list"]
        );
        // Order-stable decisions.
        assert_eq!(result.per_tool[0].0, "azure:search-service-list");
        assert_eq!(result.per_tool[1].0, "azure:subscription-list");
    }

    #[test]
    fn per_tool_error_is_isolated_denial() {
        let a = tool("srv", "alpha");
        let b = tool("srv", "beta");
        let c = tool("srv", "gamma");
        let task = task(&[a.clone(), b.clone(), c.clone()]);
        let matcher = MockScopeMatcher {
            deny_scopes: BTreeSet::new(),
            error_scopes: [b.scope.clone()].into(),
        };
        let result = match_scope_set(&task, &[a.clone(), b.clone(), c.clone()], &matcher).unwrap();
        assert!(!result.fully_granted);
        assert!(result.granted_scopes.contains(&a.scope));
        assert!(result.granted_scopes.contains(&c.scope));
        assert!(!result.granted_scopes.contains(&b.scope));
        let (_, denied) = &result.per_tool[1];
        assert!(denied.rationale.as_deref().unwrap().starts_with("error:"));
    }

    #[test]
    fn permuting_requests_permutes_decisions_identically() {
        let a = tool("srv", "alpha");
        let b = tool("srv", "beta");
        let task = task(std::slice::from_ref(&a));
        let fwd = match_scope_set(&task, &[a.clone(), b.clone()], &EchoMatcher).unwrap();
        let rev = match_scope_set(&task, &[b.clone(), a.clone()], &EchoMatcher).unwrap();
        assert_eq!(fwd.granted_scopes, rev.granted_scopes);
        assert_eq!(fwd.per_tool[0], rev.per_tool[1]);
        assert_eq!(fwd.per_tool[1], rev.per_tool[0]);
    }

    #[test]
    fn empty_and_duplicate_requests_rejected() {
        let a = tool("srv", "alpha");
        let task = task(std::slice::from_ref(&a));
        assert!(matches!(
            match_scope_set(&task, &[], &EchoMatcher),
            Err(MatcherError::EmptyRequest)
        ));
        assert!(matches!(
            match_scope_set(&task, &[a.clone(), a.clone()], &EchoMatcher),
            Err(MatcherError::DuplicateScope { .. })
        ));
    }
}
