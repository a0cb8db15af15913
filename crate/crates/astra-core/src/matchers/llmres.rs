//! LLM reasoning matcher: ask a trusted model directly whether the
//! requested tool suits the task, expecting a structured boolean flag.
//!
//! Needs only the (task, tool) pair — no registry scan — so it costs exactly
//! one chat call per pair, plus at most one stricter reprompt when the flag
//! cannot be parsed. A second failure is an indecision, which callers treat
//! as a denial.

use std::sync::Arc;

use crate::domain::{MatchDecision, MatcherId, TaskSample, ToolDescriptor};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;

use super::{MatcherError, ScopeMatcher};

/// Parses the structured flag from a completion: a bare `true`/`false`
/// (any case, optionally quoted) or a JSON value carrying a boolean,
/// including the `{"answer": <bool>}` structured-output shape.
pub fn parse_boolean_flag(text: &str) -> Option<bool> {
    let trimmed = text.trim();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
        match value {
            serde_json::Value::Bool(b) => return Some(b),
            serde_json::Value::String(s) => return parse_bare_flag(&s),
            serde_json::Value::Object(map) => {
                if let Some(serde_json::Value::Bool(b)) = map.get("answer") {
                    return Some(*b);
                }
                if let Some(serde_json::Value::Bool(b)) = map.get("appropriate") {
                    return Some(*b);
                }
                return None;
            }
            _ => return None,
        }
    }
    parse_bare_flag(trimmed)
}

fn parse_bare_flag(text: &str) -> Option<bool> {
    match text
        .trim()
        .trim_matches(['"', '\'', '.'])
        .to_ascii_lowercase()
        .as_str()
    {
        "true" | "yes" => Some(true),
        "false" | "no" => Some(false),
        _ => None,
    }
}

/// The stricter instruction used for the single reprompt.
pub fn strict_retry_user_prompt(original: &str) -> String {
    format!(
        "{original}\n\nYour previous answer could not be parsed. Respond with exactly one JSON object: {{\"answer\": true}} or {{\"answer\": false}}."
    )
}

/// One reasoning decision for a (task, requested tool) pair.
pub fn llm_res_match(
    task: &TaskSample,
    requested: &ToolDescriptor,
    gateway: &dyn Gateway,
) -> Result<MatchDecision, MatcherError> {
    let input = prompts::llmres_input_json(&task.task_text, requested);
    let first = gateway
        .chat_complete(&ChatRequest::new(prompts::LLMRES_SYSTEM, input.clone()).structured())?;
    if let Some(flag) = parse_boolean_flag(&first) {
        return Ok(MatchDecision::llmres(flag, first));
    }
    let retry = gateway.chat_complete(
        &ChatRequest::new(prompts::LLMRES_SYSTEM, strict_retry_user_prompt(&input)).structured(),
    )?;
    match parse_boolean_flag(&retry) {
        Some(flag) => Ok(MatchDecision::llmres(flag, retry)),
        None => Err(MatcherError::Indecision),
    }
}

/// Gateway-backed reasoning matcher usable wherever a [`ScopeMatcher`] is
/// expected.
pub struct LlmResMatcher {
    gateway: Arc<dyn Gateway>,
}

impl LlmResMatcher {
    pub fn new(gateway: Arc<dyn Gateway>) -> Self {
        Self { gateway }
    }
}

impl ScopeMatcher for LlmResMatcher {
    fn id(&self) -> MatcherId {
        MatcherId::Llmres
    }

    fn decide(
        &self,
        task: &TaskSample,
        requested: &ToolDescriptor,
    ) -> Result<MatchDecision, MatcherError> {
        llm_res_match(task, requested, self.gateway.as_ref())
    }
}
