//! Embedding similarity matcher.
//!
//! A trusted model first reformulates the task into an idealized tool
//! description; that description and every available tool description are
//! embedded, and the request is approved only when the requested tool is
//! the most similar one and its similarity clears the threshold.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::domain::{MatchDecision, MatcherId, TaskSample, ToolDescriptor, ToolRegistry};
use crate::gateway::{ChatRequest, EmbeddingVector, Gateway};
use crate::prompts;

use super::{MatcherError, ScopeMatcher, SemSimConfig};

/// Cosine similarity between two equal-dimension non-zero vectors.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MatcherError> {
    if a.values.len() != b.values.len() {
        return Err(MatcherError::DimensionMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b: f64 = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MatcherError::ZeroVector);
    }
    Ok(dot / (norm_a * norm_b))
}

/// Pulls the description out of a `<tool_assistant>` block, dropping the
/// leading `tool:` marker.
pub fn extract_tool_description(completion: &str) -> Result<String, MatcherError> {
    let start = completion
        .find("<tool_assistant>")
        .ok_or(MatcherError::IdealDescriptionParse)?;
    let rest = &completion[start + "<tool_assistant>".len()..];
    let end = rest
        .find("</tool_assistant>")
        .ok_or(MatcherError::IdealDescriptionParse)?;
    let body = rest[..end].trim();
    let body = body.strip_prefix("tool:").unwrap_or(body).trim();
    if body.is_empty() {
        return Err(MatcherError::IdealDescriptionParse);
    }
    Ok(body.to_string())
}

/// Asks the model for an idealized description of the tool that would best
/// satisfy the task.
pub fn generate_ideal_tool_description(
    task: &TaskSample,
    gateway: &dyn Gateway,
) -> Result<String, MatcherError> {
    let completion = reformulate(task.task_text.as_str(), gateway)?;
    extract_tool_description(&completion)
}

fn reformulate(task_text: &str, gateway: &dyn Gateway) -> Result<String, MatcherError> {
    let req = ChatRequest::new(prompts::SEMSIM_REFORMULATE_SYSTEM, task_text);
    Ok(gateway.chat_complete(&req)?)
}

/// Ideal description, falling back to the raw completion text when the
/// block cannot be parsed. The boolean reports the fallback.
fn ideal_description_with_fallback(
    task_text: &str,
    gateway: &dyn Gateway,
) -> Result<(String, bool), MatcherError> {
    let completion = reformulate(task_text, gateway)?;
    match extract_tool_description(&completion) {
        Ok(desc) => Ok((desc, false)),
        Err(MatcherError::IdealDescriptionParse) => Ok((completion.trim().to_string(), true)),
        Err(other) => Err(other),
    }
}

/// Everything the threshold decision needs, computed once per request.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SemSimScore {
    pub requested_similarity: f64,
    pub argmax_is_requested: bool,
    pub used_fallback: bool,
}

/// Approve iff the requested tool is the most similar one and clears the
/// threshold. Raising the threshold can only flip approvals to denials.
pub(crate) fn decide_from_score(score: &SemSimScore, threshold: f64) -> bool {
    score.argmax_is_requested && score.requested_similarity >= threshold
}

type EmbedCache = Mutex<HashMap<String, Arc<EmbeddingVector>>>;

/// Embeds `texts`, consulting and filling `cache` when provided.
fn embed_cached(
    gateway: &dyn Gateway,
    cache: Option<&EmbedCache>,
    texts: &[String],
) -> Result<Vec<Arc<EmbeddingVector>>, MatcherError> {
    let Some(cache) = cache else {
        let vectors = gateway.embed(texts)?;
        return Ok(vectors.into_iter().map(Arc::new).collect());
    };
    let mut missing: Vec<String> = Vec::new();
    {
        let cached = cache.lock().unwrap();
        for text in texts {
            if !cached.contains_key(text) && !missing.contains(text) {
                missing.push(text.clone());
            }
        }
    }
    if !missing.is_empty() {
        let fresh = gateway.embed(&missing)?;
        let mut cached = cache.lock().unwrap();
        for (text, vector) in missing.into_iter().zip(fresh) {
            cached.insert(text, Arc::new(vector));
        }
    }
    let cached = cache.lock().unwrap();
    Ok(texts
        .iter()
        .map(|t| Arc::clone(cached.get(t).expect("just inserted")))
        .collect())
}

/// Core scoring: ideal description similarity against each available tool,
/// argmax with lexicographic tie-break on tool name.
pub(crate) fn score_request(
    task_text: &str,
    requested: &ToolDescriptor,
    available: &[ToolDescriptor],
    gateway: &dyn Gateway,
    cache: Option<&EmbedCache>,
) -> Result<SemSimScore, MatcherError> {
    if !available.iter().any(|t| t.scope == requested.scope) {
        return Err(MatcherError::ToolNotRegistered {
            scope: requested.scope.clone(),
        });
    }
    let (ideal, used_fallback) = ideal_description_with_fallback(task_text, gateway)?;

    let mut texts = Vec::with_capacity(available.len() + 1);
    texts.push(ideal);
    texts.extend(available.iter().map(|t| t.description.clone()));
    let vectors = embed_cached(gateway, cache, &texts)?;
    let ideal_vec = &vectors[0];

    let mut requested_similarity = f64::NAN;
    let mut best: Option<(f64, &str)> = None;
    for (tool, vector) in available.iter().zip(&vectors[1..]) {
        let sim = cosine_similarity(ideal_vec, vector)?;
        if tool.scope == requested.scope {
            requested_similarity = sim;
        }
        let wins = match best {
            None => true,
            Some((best_sim, best_name)) => {
                sim > best_sim || (sim == best_sim && tool.name.as_str() < best_name)
            }
        };
        if wins {
            best = Some((sim, tool.name.as_str()));
        }
    }
    let argmax_is_requested = best.is_some_and(|(_, name)| name == requested.name);
    Ok(SemSimScore {
        requested_similarity,
        argmax_is_requested,
        used_fallback,
    })
}

fn decision_from_score(score: &SemSimScore, threshold: f64) -> MatchDecision {
    let rationale = score
        .used_fallback
        .then(|| "fallback: ideal description block unparsed, raw completion used".to_string());
    MatchDecision::semsim(
        decide_from_score(score, threshold),
        score.requested_similarity,
        rationale,
    )
}

/// Single-tool similarity match against an explicit available-tool list.
pub fn semsim_match(
    task: &TaskSample,
    requested: &ToolDescriptor,
    available: &[ToolDescriptor],
    cfg: &SemSimConfig,
    gateway: &dyn Gateway,
) -> Result<MatchDecision, MatcherError> {
    if task.n_tools != 1 {
        return Err(MatcherError::UnsupportedTaskArity {
            n_tools: task.n_tools,
        });
    }
    let score = score_request(&task.task_text, requested, available, gateway, None)?;
    Ok(decision_from_score(&score, cfg.threshold))
}

/// Which tool list the matcher compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvailableScope {
    /// The requested tool's own server (default).
    #[default]
    Server,
    /// Every registered tool.
    Global,
}

/// Registry-backed similarity matcher with a shared embedding cache, usable
/// wherever a [`ScopeMatcher`] is expected (evaluation, authorization).
pub struct SemSimMatcher {
    gateway: Arc<dyn Gateway>,
    registry: Arc<ToolRegistry>,
    cfg: SemSimConfig,
    available_scope: AvailableScope,
    cache: EmbedCache,
}

impl SemSimMatcher {
    pub fn new(gateway: Arc<dyn Gateway>, registry: Arc<ToolRegistry>, cfg: SemSimConfig) -> Self {
        Self {
            gateway,
            registry,
            cfg,
            available_scope: AvailableScope::Server,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_available_scope(mut self, scope: AvailableScope) -> Self {
        self.available_scope = scope;
        self
    }

    pub fn config(&self) -> &SemSimConfig {
        &self.cfg
    }

    fn available_for(&self, requested: &ToolDescriptor) -> Vec<ToolDescriptor> {
        match self.available_scope {
            AvailableScope::Server => self
                .registry
                .tools_of(&requested.server_id)
                .map(|t| t.to_vec())
                .unwrap_or_default(),
            AvailableScope::Global => self.registry.all_tools().cloned().collect(),
        }
    }

    pub(crate) fn score(
        &self,
        task_text: &str,
        requested: &ToolDescriptor,
    ) -> Result<SemSimScore, MatcherError> {
        let available = self.available_for(requested);
        score_request(
            task_text,
            requested,
            &available,
            self.gateway.as_ref(),
            Some(&self.cache),
        )
    }
}

impl ScopeMatcher for SemSimMatcher {
    fn id(&self) -> MatcherId {
        MatcherId::Semsim
    }

    fn decide(
        &self,
        task: &TaskSample,
        requested: &ToolDescriptor,
    ) -> Result<MatchDecision, MatcherError> {
        let score = self.score(&task.task_text, requested)?;
        Ok(decision_from_score(&score, self.cfg.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SampleSource;
    use crate::gateway::MockGateway;
    use proptest::prelude::*;

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
            model_id: "test".into(),
        }
    }

    #[test]
    fn cosine_identity_is_one() {
        let v = vec_of(&[0.3, 0.4, 0.5]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let a = vec_of(&[1.0, 0.0]);
        let b = vec_of(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.70711 is the pinned expected value
    fn cosine_forty_five_degrees() {
        let a = vec_of(&[1.0, 1.0]);
        let b = vec_of(&[1.0, 0.0]);
        let got = cosine_similarity(&a, &b).unwrap();
        assert!((got - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn cosine_rejects_mismatched_and_zero() {
        let a = vec_of(&[1.0, 0.0]);
        let b = vec_of(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(MatcherError::DimensionMismatch { .. })
        ));
        let z = vec_of(&[0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &z),
            Err(MatcherError::ZeroVector)
        ));
    }

    #[test]
    fn extracts_description_from_block() {
        let completion = "<tool_assistant>\ntool: lists search services\n</tool_assistant>";
        assert_eq!(
            extract_tool_description(completion).unwrap(),
            "lists search services"
        );
    }

    #[test]
    fn missing_block_is_parse_error() {
        assert!(matches!(
            extract_tool_description("no tags here"),
            Err(MatcherError::IdealDescriptionParse)
        ));
    }

    fn azure_tools() -> Vec<ToolDescriptor> {
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
        ]
    }

    fn single_task(text: &str, tool: &ToolDescriptor) -> TaskSample {
        TaskSample::new("t", text, vec![tool.clone()], SampleSource::Generated).unwrap()
    }

    #[test]
    fn approves_requested_argmax_above_threshold() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        let task = single_task(
            "Please enumerate the search services available under a given subscription today",
            &tools[0],
        );
        let cfg = SemSimConfig::with_threshold(0.5);
        let decision = semsim_match(&task, &tools[0], &tools, &cfg, &gw).unwrap();
        assert!(decision.appropriate, "score {:?}", decision.score);
        assert!(decision.score.unwrap() >= 0.5);
    }

    #[test]
    fn denies_when_sibling_is_argmax() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        // Task text matches the subscription tool but the agent asks for
        // the search tool.
        let task = single_task(
            "List every subscription identifier attached to the tenant billing account",
            &tools[1],
        );
        let cfg = SemSimConfig::with_threshold(0.05);
        let decision = semsim_match(&task, &tools[0], &tools, &cfg, &gw).unwrap();
        assert!(!decision.appropriate);
    }

    #[test]
    fn denies_below_threshold_even_when_argmax() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        let task = single_task(
            "Please enumerate the search services available under a given subscription today",
            &tools[0],
        );
        let cfg = SemSimConfig::with_threshold(0.999);
        let decision = semsim_match(&task, &tools[0], &tools, &cfg, &gw).unwrap();
        assert!(!decision.appropriate);
        assert!(decision.score.is_some());
    }

    #[test]
    fn requested_absent_from_available_is_an_error() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        let outsider = ToolDescriptor::new("azure", "vm_list", "List virtual machines").unwrap();
        let task = single_task("anything", &outsider);
        let cfg = SemSimConfig::default();
        assert!(matches!(
            semsim_match(&task, &outsider, &tools, &cfg, &gw),
            Err(MatcherError::ToolNotRegistered { .. })
        ));
    }

    #[test]
    fn multi_tool_task_is_unsupported() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        let task = TaskSample::new(
            "t",
            "do two things",
            vec![tools[0].clone(), tools[1].clone()],
            SampleSource::Generated,
        )
        .unwrap();
        let cfg = SemSimConfig::default();
        assert!(matches!(
            semsim_match(&task, &tools[0], &tools, &cfg, &gw),
            Err(MatcherError::UnsupportedTaskArity { n_tools: 2 })
        ));
    }

    #[test]
    fn fallback_on_unparseable_reformulation() {
        let gw = MockGateway::new(11);
        let tools = azure_tools();
        let text = "find the search services for me";
        // Pin the reformulation to something without the block.
        gw.add_chat_fixture(
            crate::prompts::SEMSIM_REFORMULATE_SYSTEM,
            text,
            "Enumerate the search services available under a given subscription",
        );
        let task = single_task(text, &tools[0]);
        let cfg = SemSimConfig::with_threshold(0.3);
        let decision = semsim_match(&task, &tools[0], &tools, &cfg, &gw).unwrap();
        assert!(decision
            .rationale
            .as_deref()
            .unwrap()
            .starts_with("fallback:"));
        // Fallback still produced a usable decision.
        assert!(decision.appropriate);
    }

    #[test]
    fn tie_break_is_lexicographic_on_name() {
        // Two tools with byte-identical descriptions tie exactly; the
        // lexicographically smaller name must win the argmax.
        let a = ToolDescriptor::new("srv", "aardvark", "identical words here").unwrap();
        let b = ToolDescriptor::new("srv", "zebra", "identical words here").unwrap();
        let gw = MockGateway::new(3);
        let task = single_task("identical words here", &b);
        let cfg = SemSimConfig::with_threshold(0.0);
        let decision = semsim_match(&task, &b, &[a.clone(), b.clone()], &cfg, &gw).unwrap();
        assert!(!decision.appropriate, "zebra must lose the tie to aardvark");
        let decision = semsim_match(&task, &a, &[a.clone(), b], &cfg, &gw).unwrap();
        assert!(decision.appropriate);
    }

    proptest! {
        /// Raising the threshold never turns a denial into an approval, so
        /// false positives are monotonically non-increasing in the threshold.
        #[test]
        fn threshold_monotonicity(
            sims in proptest::collection::vec((0.0_f64..1.0, any::<bool>()), 1..40),
            t1 in 0.0_f64..1.0,
            t2 in 0.0_f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let fp = |threshold: f64| {
                sims.iter()
                    .filter(|(sim, argmax)| {
                        decide_from_score(
                            &SemSimScore {
                                requested_similarity: *sim,
                                argmax_is_requested: *argmax,
                                used_fallback: false,
                            },
                            threshold,
                        )
                    })
                    .count()
            };
            prop_assert!(fp(hi) <= fp(lo));
        }
    }
}
