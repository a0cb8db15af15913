//! Core data types shared by the pipeline, matchers, and servers: tools,
//! manifests, task samples, match requests/decisions, and the canonical
//! scope naming scheme.
//!
//! All types are immutable values after construction and safe to share
//! across threads. JSONL record schemas use the field names exactly as
//! declared here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid identifier: {0:?}")]
    InvalidIdentifier(String),
    #[error("tool {tool:?} violates invariant: {reason}")]
    ToolInvariant { tool: String, reason: String },
    #[error("task sample {sample_id:?} violates invariant: {reason}")]
    SampleInvariant { sample_id: String, reason: String },
    #[error("match request for {scope:?} violates label {label:?}: {reason}")]
    LabelInvariant {
        scope: String,
        label: MatchLabel,
        reason: String,
    },
    #[error("dataset config invalid: {0}")]
    ConfigInvariant(String),
}

/// Canonical scope string for a tool: `<server_id>:<kebab-case tool name>`.
///
/// Scopes are one-to-one with tools. Both identifiers are normalized to
/// lowercase kebab-case, so equivalent spellings (`GetPage`, `get_page`)
/// name the same scope; distinct normalized pairs always produce distinct
/// scopes because `:` never appears in a normalized part.
pub fn canonical_scope(server_id: &str, tool_name: &str) -> Result<String, DomainError> {
    let server = kebab_case(server_id)
        .ok_or_else(|| DomainError::InvalidIdentifier(server_id.to_string()))?;
    let name = kebab_case(tool_name)
        .ok_or_else(|| DomainError::InvalidIdentifier(tool_name.to_string()))?;
    Ok(format!("{server}:{name}"))
}

/// Lowercase kebab-case over ASCII alphanumerics. Word boundaries come from
/// separators (anything non-alphanumeric), lower-to-upper transitions, and
/// acronym ends (`HTTPServer` -> `http-server`). Returns `None` when nothing
/// survives normalization.
fn kebab_case(input: &str) -> Option<String> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len() + 4);
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_alphanumeric() {
            if c.is_ascii_uppercase() {
                let prev_lower_or_digit =
                    i > 0 && (chars[i - 1].is_ascii_lowercase() || chars[i - 1].is_ascii_digit());
                let acronym_end = i > 0
                    && chars[i - 1].is_ascii_uppercase()
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
                if (prev_lower_or_digit || acronym_end) && !out.ends_with('-') && !out.is_empty() {
                    out.push('-');
                }
                out.push(c.to_ascii_lowercase());
            } else {
                out.push(c);
            }
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_matches('-').to_string();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed)
    }
}

/// One MCP tool: the unit a scope protects.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub server_id: String,
    pub scope: String,
}

impl ToolDescriptor {
    pub fn new(
        server_id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let server_id = server_id.into();
        let name = name.into();
        let scope = canonical_scope(&server_id, &name)?;
        Ok(Self {
            name,
            description: description.into(),
            server_id,
            scope,
        })
    }

    /// Checks the stored scope against the canonical rule. Deserialized
    /// descriptors must pass this before entering a registry.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.name.is_empty() {
            return Err(DomainError::ToolInvariant {
                tool: self.name.clone(),
                reason: "name is empty".into(),
            });
        }
        let expected = canonical_scope(&self.server_id, &self.name)?;
        if self.scope != expected {
            return Err(DomainError::ToolInvariant {
                tool: self.name.clone(),
                reason: format!("scope {:?} != canonical {:?}", self.scope, expected),
            });
        }
        Ok(())
    }
}

/// All tools exposed by one MCP server, sorted by name at ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McpServerManifest {
    pub server_id: String,
    pub tools: Vec<ToolDescriptor>,
    #[serde(default = "default_language_tag")]
    pub language_tag: String,
}

fn default_language_tag() -> String {
    "en".to_string()
}

impl McpServerManifest {
    pub fn new(
        server_id: impl Into<String>,
        mut tools: Vec<ToolDescriptor>,
        language_tag: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let server_id = server_id.into();
        tools.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Self {
            server_id,
            tools,
            language_tag: language_tag.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen = BTreeSet::new();
        for tool in &self.tools {
            tool.validate()?;
            if tool.server_id != self.server_id {
                return Err(DomainError::ToolInvariant {
                    tool: tool.name.clone(),
                    reason: format!(
                        "tool server {:?} != manifest server {:?}",
                        tool.server_id, self.server_id
                    ),
                });
            }
            if !seen.insert(&tool.name) {
                return Err(DomainError::ToolInvariant {
                    tool: tool.name.clone(),
                    reason: "duplicate tool name within server".into(),
                });
            }
        }
        Ok(())
    }

    pub fn tool_by_name(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.name == name)
    }
}

/// Where a task sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Generated,
    Toucan,
}

/// A natural-language task plus its ground-truth required tool set — the
/// dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub task_text: String,
    pub required_tools: Vec<ToolDescriptor>,
    pub n_tools: u8,
    pub source: SampleSource,
    pub sample_id: String,
}

impl TaskSample {
    pub fn new(
        sample_id: impl Into<String>,
        task_text: impl Into<String>,
        required_tools: Vec<ToolDescriptor>,
        source: SampleSource,
    ) -> Result<Self, DomainError> {
        let sample = Self {
            task_text: task_text.into(),
            n_tools: required_tools.len() as u8,
            required_tools,
            source,
            sample_id: sample_id.into(),
        };
        sample.validate()?;
        Ok(sample)
    }

    /// A ground-truth-free sample wrapping a live authorization prompt.
    /// Used only for matching; never serialized into datasets, so the
    /// dataset-row invariants (1 <= n_tools <= 3) do not apply.
    pub fn from_prompt(sample_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            task_text: prompt.into(),
            required_tools: Vec::new(),
            n_tools: 0,
            source: SampleSource::Generated,
            sample_id: sample_id.into(),
        }
    }

    /// Dataset-row invariants: tool count bounds and single-server tasks.
    pub fn validate(&self) -> Result<(), DomainError> {
        let err = |reason: String| DomainError::SampleInvariant {
            sample_id: self.sample_id.clone(),
            reason,
        };
        if self.task_text.is_empty() {
            return Err(err("task_text is empty".into()));
        }
        if self.required_tools.len() != self.n_tools as usize {
            return Err(err(format!(
                "n_tools {} != |required_tools| {}",
                self.n_tools,
                self.required_tools.len()
            )));
        }
        if !(1..=3).contains(&self.n_tools) {
            return Err(err(format!("n_tools {} outside 1..=3", self.n_tools)));
        }
        let servers: BTreeSet<&str> = self
            .required_tools
            .iter()
            .map(|t| t.server_id.as_str())
            .collect();
        if servers.len() != 1 {
            return Err(err(format!("tools span {} servers", servers.len())));
        }
        let scopes: BTreeSet<&str> = self
            .required_tools
            .iter()
            .map(|t| t.scope.as_str())
            .collect();
        if scopes.len() != self.required_tools.len() {
            return Err(err("duplicate tools in required set".into()));
        }
        Ok(())
    }

    pub fn server_id(&self) -> Option<&str> {
        self.required_tools.first().map(|t| t.server_id.as_str())
    }

    pub fn requires_scope(&self, scope: &str) -> bool {
        self.required_tools.iter().any(|t| t.scope == scope)
    }
}

/// Ground-truth label of a simulated match request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLabel {
    /// Requested tool is in the task's required set.
    Correct,
    /// Requested tool is from the same server but not required.
    Wrong,
    /// Requested tool is from a different server entirely.
    Null,
}

impl fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchLabel::Correct => write!(f, "correct"),
            MatchLabel::Wrong => write!(f, "wrong"),
            MatchLabel::Null => write!(f, "null"),
        }
    }
}

/// One (task, requested tool) pair with its ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRequest {
    pub task: TaskSample,
    pub requested_tool: ToolDescriptor,
    pub label: MatchLabel,
}

impl MatchRequest {
    pub fn new(
        task: TaskSample,
        requested_tool: ToolDescriptor,
        label: MatchLabel,
    ) -> Result<Self, DomainError> {
        let req = Self {
            task,
            requested_tool,
            label,
        };
        req.validate()?;
        Ok(req)
    }

    /// Label invariants, checked by construction and re-checked on load.
    pub fn validate(&self) -> Result<(), DomainError> {
        let err = |reason: String| DomainError::LabelInvariant {
            scope: self.requested_tool.scope.clone(),
            label: self.label,
            reason,
        };
        let in_required = self.task.requires_scope(&self.requested_tool.scope);
        let same_server = self.task.server_id() == Some(self.requested_tool.server_id.as_str());
        match self.label {
            MatchLabel::Correct if !in_required => {
                Err(err("correct label but tool not in required set".into()))
            }
            MatchLabel::Wrong if in_required => {
                Err(err("wrong label but tool is in required set".into()))
            }
            MatchLabel::Wrong if !same_server => {
                Err(err("wrong label but tool is from another server".into()))
            }
            MatchLabel::Null if same_server => {
                Err(err("null label but tool is from the task's server".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which matcher produced a decision. `Echo` and `Mock` are harness
/// matchers used for oracle and flow tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherId {
    Semsim,
    Llmres,
    Echo,
    Mock,
}

impl fmt::Display for MatcherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatcherId::Semsim => write!(f, "semsim"),
            MatcherId::Llmres => write!(f, "llmres"),
            MatcherId::Echo => write!(f, "echo"),
            MatcherId::Mock => write!(f, "mock"),
        }
    }
}

/// A matcher's verdict for one (task, requested tool) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub appropriate: bool,
    pub score: Option<f64>,
    pub rationale: Option<String>,
    pub matcher_id: MatcherId,
}

impl MatchDecision {
    /// Similarity decisions always carry a score.
    pub fn semsim(appropriate: bool, score: f64, rationale: Option<String>) -> Self {
        Self {
            appropriate,
            score: Some(score),
            rationale,
            matcher_id: MatcherId::Semsim,
        }
    }

    /// Reasoning decisions always carry the raw completion as rationale.
    pub fn llmres(appropriate: bool, rationale: impl Into<String>) -> Self {
        Self {
            appropriate,
            score: None,
            rationale: Some(rationale.into()),
            matcher_id: MatcherId::Llmres,
        }
    }

    pub fn harness(matcher_id: MatcherId, appropriate: bool, rationale: Option<String>) -> Self {
        Self {
            appropriate,
            score: None,
            rationale,
            matcher_id,
        }
    }
}

/// Knobs for one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Tools per task, N in {1, 2, 3}.
    pub n_tools: u8,
    /// Tasks generated per tool set, M.
    pub tasks_per_set: u32,
    /// Fraction of incorrect matches drawn from the same server.
    pub wrong_ratio: f64,
    /// Fraction of incorrect matches drawn from another server.
    pub null_ratio: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(n_tools: u8, seed: u64) -> Self {
        Self {
            n_tools,
            tasks_per_set: 3,
            wrong_ratio: 0.8,
            null_ratio: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(1..=3).contains(&self.n_tools) {
            return Err(DomainError::ConfigInvariant(format!(
                "n_tools {} outside 1..=3",
                self.n_tools
            )));
        }
        if self.tasks_per_set < 1 {
            return Err(DomainError::ConfigInvariant("tasks_per_set < 1".into()));
        }
        if (self.wrong_ratio + self.null_ratio - 1.0).abs() > 1e-9 {
            return Err(DomainError::ConfigInvariant(format!(
                "wrong_ratio {} + null_ratio {} != 1.0",
                self.wrong_ratio, self.null_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.wrong_ratio) {
            return Err(DomainError::ConfigInvariant(
                "wrong_ratio outside [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Lookup structure over every ingested manifest; scope -> tool resolution
/// for the matchers, servers, and simulator.
#[derive(Debug, Default, Clone)]
pub struct ToolRegistry {
    servers: BTreeMap<String, McpServerManifest>,
    by_scope: BTreeMap<String, ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_manifests(
        manifests: impl IntoIterator<Item = McpServerManifest>,
    ) -> Result<Self, DomainError> {
        let mut registry = Self::new();
        for manifest in manifests {
            registry.insert_manifest(manifest)?;
        }
        Ok(registry)
    }

    pub fn insert_manifest(&mut self, manifest: McpServerManifest) -> Result<(), DomainError> {
        manifest.validate()?;
        for tool in &manifest.tools {
            if let Some(existing) = self.by_scope.get(&tool.scope) {
                if existing.server_id != tool.server_id {
                    return Err(DomainError::ToolInvariant {
                        tool: tool.name.clone(),
                        reason: format!("scope {:?} already registered", tool.scope),
                    });
                }
            }
            self.by_scope.insert(tool.scope.clone(), tool.clone());
        }
        self.servers.insert(manifest.server_id.clone(), manifest);
        Ok(())
    }

    pub fn server_ids(&self) -> impl Iterator<Item = &str> {
        self.servers.keys().map(|s| s.as_str())
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn manifest(&self, server_id: &str) -> Option<&McpServerManifest> {
        self.servers.get(server_id)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &McpServerManifest> {
        self.servers.values()
    }

    pub fn tools_of(&self, server_id: &str) -> Option<&[ToolDescriptor]> {
        self.servers.get(server_id).map(|m| m.tools.as_slice())
    }

    pub fn resolve_scope(&self, scope: &str) -> Option<&ToolDescriptor> {
        self.by_scope.get(scope)
    }

    pub fn all_tools(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.servers.values().flat_map(|m| m.tools.iter())
    }

    pub fn all_scopes(&self) -> Vec<String> {
        self.by_scope.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }
}
