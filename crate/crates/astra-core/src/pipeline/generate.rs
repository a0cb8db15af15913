//! Synthetic task generation: one structured chat request per tool set,
//! yielding M tasks that indirectly require the set's tools.

use crate::domain::{SampleSource, TaskSample, ToolDescriptor, ToolRegistry};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;

use super::{derive_seed, sample_tool_sets, PipelineError};

/// Parses a completion into a task list. Accepts the structured
/// `{"tasks": [...]}` object, a bare JSON array of strings, or plain
/// newline-separated tasks (with list markers stripped).
pub fn parse_task_list(completion: &str) -> Vec<String> {
    let trimmed = completion.trim();
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
        let array = match &value {
            serde_json::Value::Object(map) => map.get("tasks").and_then(|t| t.as_array()),
            serde_json::Value::Array(_) => value.as_array(),
            _ => None,
        };
        if let Some(array) = array {
            return array
                .iter()
                .filter_map(|v| v.as_str())
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
        }
    }
    trimmed
        .lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| {
                    c.is_ascii_digit() || c == '.' || c == '-' || c == '*'
                })
                .trim()
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Generates M tasks for one tool set. Tool descriptions must already be
/// argument-stripped. Sample ids are `<id_prefix>-t<k>`.
pub fn generate_tasks(
    tool_set: &[ToolDescriptor],
    tasks_per_set: u32,
    gateway: &dyn Gateway,
    id_prefix: &str,
) -> Result<Vec<TaskSample>, PipelineError> {
    let system = prompts::taskgen_system(tool_set);
    let user = prompts::taskgen_user(tasks_per_set);
    let completion = gateway.chat_complete(&ChatRequest::new(system, user))?;
    let texts = parse_task_list(&completion);
    if texts.len() < tasks_per_set as usize {
        return Err(PipelineError::TaskGenerationIncomplete {
            expected: tasks_per_set,
            got: texts.len(),
        });
    }
    texts
        .into_iter()
        .take(tasks_per_set as usize)
        .enumerate()
        .map(|(k, text)| {
            TaskSample::new(
                format!("{id_prefix}-t{k}"),
                text,
                tool_set.to_vec(),
                SampleSource::Generated,
            )
            .map_err(PipelineError::from)
        })
        .collect()
}

/// Full generation pass over a registry: sample tool sets per server
/// (argument-stripping each description first), then generate M tasks per
/// set. Deterministic given (registry, n, m, seed, gateway).
pub fn generate_dataset(
    registry: &ToolRegistry,
    n_tools: u8,
    tasks_per_set: u32,
    seed: u64,
    gateway: &dyn Gateway,
) -> Result<Vec<TaskSample>, PipelineError> {
    let mut tasks = Vec::new();
    for manifest in registry.manifests() {
        let mut stripped = manifest.clone();
        for tool in &mut stripped.tools {
            tool.description = super::strip_argument_details(&tool.description);
        }
        let set_seed = derive_seed(
            seed,
            "tool-sets",
            &format!("{}:{n_tools}", manifest.server_id),
        );
        let sets = match sample_tool_sets(&stripped, n_tools, set_seed) {
            Ok(sets) => sets,
            Err(PipelineError::InsufficientTools { .. }) => {
                tracing::warn!(
                    server = %manifest.server_id,
                    n_tools,
                    "server has too few tools for this set size; skipped"
                );
                continue;
            }
            Err(other) => return Err(other),
        };
        for (i, set) in sets.iter().enumerate() {
            let prefix = format!("n{n_tools}-{}-s{i}", manifest.server_id);
            tasks.extend(generate_tasks(set, tasks_per_set, gateway, &prefix)?);
        }
    }
    Ok(tasks)
}
