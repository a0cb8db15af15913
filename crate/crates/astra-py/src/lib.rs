//! Python bindings over the core matching, pipeline, and evaluation
//! primitives. Structured results cross the boundary as JSON strings;
//! scalars and vectors map to native Python types.

use std::path::Path;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use astra_core::config::AppConfig;
use astra_core::domain::{DatasetConfig, TaskSample, ToolRegistry};
use astra_core::eval::{evaluate, EvalOptions};
use astra_core::gateway::{ChatRequest, Gateway};
use astra_core::matchers::{calibrate_from_points, CalibrationPoint, ScopeMatcher};
use astra_core::pipeline;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn mock_config(seed: u64, threshold: f64) -> AppConfig {
    let mut config = AppConfig {
        seed,
        ..AppConfig::default()
    };
    config.matcher.threshold = threshold;
    config.matcher.calibrated = true;
    config
}

/// Canonical scope string for a (server id, tool name) pair.
#[pyfunction]
fn canonical_scope(server_id: &str, tool_name: &str) -> PyResult<String> {
    astra_core::canonical_scope(server_id, tool_name).map_err(value_err)
}

/// Cosine similarity between two equal-length vectors.
#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    let left = astra_core::EmbeddingVector {
        values: a,
        model_id: "py".into(),
    };
    let right = astra_core::EmbeddingVector {
        values: b,
        model_id: "py".into(),
    };
    astra_core::matchers::cosine_similarity(&left, &right).map_err(value_err)
}

/// Removes argument blocks from a tool description.
#[pyfunction]
fn strip_argument_details(description: &str) -> String {
    pipeline::strip_argument_details(description)
}

/// S256 PKCE verification; `plain` raises ValueError.
#[pyfunction]
fn verify_pkce(code_verifier: &str, code_challenge: &str, method: &str) -> PyResult<bool> {
    astra_core::authz::verify_pkce(code_verifier, code_challenge, method).map_err(value_err)
}

/// S256 challenge for a verifier.
#[pyfunction]
fn derive_pkce_challenge(code_verifier: &str) -> String {
    astra_core::authz::derive_challenge(code_verifier)
}

/// Structured/loose boolean-flag parsing used by the reasoning matcher.
#[pyfunction]
fn parse_boolean_flag(text: &str) -> Option<bool> {
    astra_core::matchers::parse_boolean_flag(text)
}

/// F1-optimal similarity threshold over (score, is_positive) points.
#[pyfunction]
fn calibrate_threshold(points: Vec<(f64, bool)>) -> PyResult<f64> {
    let points: Vec<CalibrationPoint> = points
        .into_iter()
        .map(|(score, positive)| CalibrationPoint::new(score, positive))
        .collect();
    calibrate_from_points(&points).map_err(value_err)
}

/// Deterministic offline chat/embedding backend.
#[pyclass]
struct MockGateway {
    inner: Arc<astra_core::MockGateway>,
}

#[pymethods]
impl MockGateway {
    #[new]
    fn new(seed: u64) -> Self {
        Self {
            inner: Arc::new(astra_core::MockGateway::new(seed)),
        }
    }

    fn chat(&self, system_prompt: &str, user_prompt: &str) -> PyResult<String> {
        self.inner
            .chat_complete(&ChatRequest::new(system_prompt, user_prompt))
            .map_err(runtime_err)
    }

    fn embed(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .embed(&texts)
            .map_err(runtime_err)?
            .into_iter()
            .map(|v| v.values)
            .collect())
    }

    fn chat_calls(&self) -> usize {
        self.inner.chat_calls()
    }

    fn __repr__(&self) -> String {
        format!("MockGateway(chat_calls={})", self.inner.chat_calls())
    }
}

/// Tool registry loaded from a manifest directory.
#[pyclass]
struct Registry {
    inner: Arc<ToolRegistry>,
}

#[pymethods]
impl Registry {
    #[staticmethod]
    fn from_manifest_dir(path: &str) -> PyResult<Self> {
        let manifests = pipeline::ingest_manifest_dir(Path::new(path)).map_err(value_err)?;
        let registry = ToolRegistry::from_manifests(manifests).map_err(value_err)?;
        Ok(Self {
            inner: Arc::new(registry),
        })
    }

    fn server_ids(&self) -> Vec<String> {
        self.inner.server_ids().map(String::from).collect()
    }

    fn scopes(&self) -> Vec<String> {
        self.inner.all_scopes()
    }

    fn tool_count(&self) -> usize {
        self.inner.all_tools().count()
    }

    /// Tool descriptor for a scope, as a JSON string; None when absent.
    fn resolve_scope(&self, scope: &str) -> Option<String> {
        self.inner
            .resolve_scope(scope)
            .map(|t| serde_json::to_string(t).expect("tool serializes"))
    }

    fn __repr__(&self) -> String {
        format!(
            "Registry(servers={}, tools={})",
            self.inner.server_count(),
            self.tool_count()
        )
    }
}

/// Task-to-scope matcher ("semsim", "llmres", "echo", or "mock") over a
/// registry and the deterministic mock backend.
#[pyclass]
struct Matcher {
    inner: Arc<dyn ScopeMatcher>,
}

#[pymethods]
impl Matcher {
    #[new]
    #[pyo3(signature = (kind, registry, seed=7, threshold=0.5))]
    fn new(kind: &str, registry: &Registry, seed: u64, threshold: f64) -> PyResult<Self> {
        let config = mock_config(seed, threshold);
        let gateway = config.build_gateway(false).map_err(runtime_err)?;
        let inner = config
            .build_matcher(kind, Arc::clone(&registry.inner), gateway)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Decide whether `scope` suits a live prompt. Returns
    /// (appropriate, score, rationale).
    fn decide_prompt(
        &self,
        prompt: &str,
        scope: &str,
        registry: &Registry,
    ) -> PyResult<(bool, Option<f64>, Option<String>)> {
        let tool = registry
            .inner
            .resolve_scope(scope)
            .ok_or_else(|| value_err(format!("scope {scope:?} not registered")))?;
        let task = TaskSample::from_prompt("py-prompt", prompt);
        let decision = self.inner.decide(&task, tool).map_err(runtime_err)?;
        Ok((decision.appropriate, decision.score, decision.rationale))
    }
}

/// Runs the offline pipeline (generate, simulate, split) for one tool
/// count over a manifest directory; returns a JSON summary.
#[pyfunction]
#[pyo3(signature = (manifests_dir, out_dir, n_tools=1, tasks_per_set=3, seed=7))]
fn run_pipeline(
    manifests_dir: &str,
    out_dir: &str,
    n_tools: u8,
    tasks_per_set: u32,
    seed: u64,
) -> PyResult<String> {
    let manifests = pipeline::ingest_manifest_dir(Path::new(manifests_dir)).map_err(value_err)?;
    let registry = ToolRegistry::from_manifests(manifests).map_err(value_err)?;
    let gateway = astra_core::MockGateway::new(seed);
    let tasks = pipeline::generate_dataset(&registry, n_tools, tasks_per_set, seed, &gateway)
        .map_err(runtime_err)?;
    let cfg = DatasetConfig::new(n_tools, seed);
    let matches = pipeline::simulate_matches(&tasks, &cfg, &registry).map_err(runtime_err)?;
    let (validation, test, split) =
        pipeline::split_dataset(&tasks, seed, 0.5).map_err(runtime_err)?;

    let out = Path::new(out_dir);
    std::fs::create_dir_all(out).map_err(runtime_err)?;
    let tasks_path = out.join(format!("tasks_N{n_tools}.jsonl"));
    let matches_path = out.join(format!("matches_N{n_tools}.jsonl"));
    pipeline::write_tasks_file(&tasks_path, seed, n_tools, &tasks).map_err(runtime_err)?;
    pipeline::write_matches_file(&matches_path, seed, n_tools, &matches).map_err(runtime_err)?;
    split.write(&out.join("split.json")).map_err(runtime_err)?;

    Ok(serde_json::json!({
        "tasks": tasks.len(),
        "matches": matches.len(),
        "validation_tasks": validation.len(),
        "test_tasks": test.len(),
        "tasks_file": tasks_path.display().to_string(),
        "matches_file": matches_path.display().to_string(),
    })
    .to_string())
}

/// Evaluates a matcher over a matches JSONL file; returns the metrics
/// report as a JSON string.
#[pyfunction]
#[pyo3(signature = (matcher_kind, data_path, manifests_dir, seed=7, threshold=0.5))]
fn evaluate_matches_file(
    matcher_kind: &str,
    data_path: &str,
    manifests_dir: &str,
    seed: u64,
    threshold: f64,
) -> PyResult<String> {
    let manifests = pipeline::ingest_manifest_dir(Path::new(manifests_dir)).map_err(value_err)?;
    let registry = Arc::new(ToolRegistry::from_manifests(manifests).map_err(value_err)?);
    let (_, requests) = pipeline::read_matches_file(Path::new(data_path)).map_err(value_err)?;
    let config = mock_config(seed, threshold);
    let gateway = config.build_gateway(false).map_err(runtime_err)?;
    let matcher = config
        .build_matcher(matcher_kind, Arc::clone(&registry), gateway)
        .map_err(value_err)?;
    let report = evaluate(
        matcher.as_ref(),
        &requests,
        &EvalOptions {
            dataset_id: data_path.to_string(),
            parallelism: 4,
            cache: None,
        },
    )
    .map_err(runtime_err)?;
    serde_json::to_string(&report).map_err(runtime_err)
}

#[pymodule]
fn astra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(canonical_scope, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(strip_argument_details, m)?)?;
    m.add_function(wrap_pyfunction!(verify_pkce, m)?)?;
    m.add_function(wrap_pyfunction!(derive_pkce_challenge, m)?)?;
    m.add_function(wrap_pyfunction!(parse_boolean_flag, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_matches_file, m)?)?;
    m.add_class::<MockGateway>()?;
    m.add_class::<Registry>()?;
    m.add_class::<Matcher>()?;
    Ok(())
}
