//! Preprocessing for Toucan-format corpora into the pipeline's manifest and
//! task-sample shapes.
//!
//! Documented input schema (JSON):
//!
//! ```json
//! {
//!   "servers": [
//!     {"server_id": "s", "tools": [{"name": "t", "description": "d"}]}
//!   ],
//!   "tasks": [
//!     {"task_text": "...", "tools": [{"server_id": "s", "name": "t"}]}
//!   ]
//! }
//! ```
//!
//! Filters, in order: non-English servers (ASCII-letter ratio heuristic),
//! tools with empty descriptions, servers whose tool sets duplicate another
//! server's (keeping the lexicographically first server id), tasks whose
//! tools do not all come from one retained server, and servers with fewer
//! than 2N tools.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{McpServerManifest, SampleSource, TaskSample, ToolDescriptor};

use super::PipelineError;

#[derive(Debug, Deserialize)]
struct RawCorpus {
    servers: Vec<RawServer>,
    #[serde(default)]
    tasks: Vec<RawTask>,
}

#[derive(Debug, Deserialize)]
struct RawServer {
    server_id: String,
    #[serde(default)]
    language_tag: Option<String>,
    tools: Vec<RawTool>,
}

#[derive(Debug, Deserialize)]
struct RawTool {
    name: String,
    description: String,
}

#[derive(Debug, Deserialize)]
struct RawTask {
    task_text: String,
    tools: Vec<RawToolRef>,
}

#[derive(Debug, Deserialize)]
struct RawToolRef {
    server_id: String,
    name: String,
}

/// Counts emitted at each filtering stage.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToucanReport {
    pub servers_input: usize,
    pub servers_dropped_non_english: usize,
    pub tools_dropped_empty_description: usize,
    pub servers_dropped_empty: usize,
    pub servers_dropped_duplicate: usize,
    pub servers_dropped_too_small: usize,
    pub servers_retained: usize,
    pub tasks_input: usize,
    pub tasks_retained: usize,
}

/// ASCII-letter ratio heuristic: a server is English when at least 95% of
/// the alphabetic characters across its tool names and descriptions are
/// ASCII letters.
fn is_english(server: &RawServer) -> bool {
    let mut ascii = 0_usize;
    let mut total = 0_usize;
    let mut count = |text: &str| {
        for c in text.chars() {
            if c.is_alphabetic() {
                total += 1;
                if c.is_ascii_alphabetic() {
                    ascii += 1;
                }
            }
        }
    };
    count(&server.server_id);
    for tool in &server.tools {
        count(&tool.name);
        count(&tool.description);
    }
    total == 0 || (ascii as f64 / total as f64) >= 0.95
}

pub fn preprocess_toucan(
    raw_json: &str,
    n_tools: u8,
) -> Result<(Vec<McpServerManifest>, Vec<TaskSample>, ToucanReport), PipelineError> {
    let corpus: RawCorpus = serde_json::from_str(raw_json)
        .map_err(|e| PipelineError::CorpusSchemaError(e.to_string()))?;
    let mut report = ToucanReport {
        servers_input: corpus.servers.len(),
        tasks_input: corpus.tasks.len(),
        ..Default::default()
    };

    // 1. Language filter.
    let mut servers: Vec<RawServer> = Vec::new();
    for server in corpus.servers {
        if is_english(&server) {
            servers.push(server);
        } else {
            report.servers_dropped_non_english += 1;
        }
    }

    // 2. Drop tools with empty descriptions; a server left with no tools
    //    goes away entirely.
    let mut manifests: Vec<McpServerManifest> = Vec::new();
    for server in servers {
        let mut tools = Vec::new();
        for tool in server.tools {
            if tool.description.trim().is_empty() {
                report.tools_dropped_empty_description += 1;
                continue;
            }
            let descriptor = ToolDescriptor::new(&server.server_id, &tool.name, tool.description)
                .map_err(|e| PipelineError::CorpusSchemaError(e.to_string()))?;
            tools.push(descriptor);
        }
        if tools.is_empty() {
            report.servers_dropped_empty += 1;
            continue;
        }
        let manifest = McpServerManifest::new(
            server.server_id,
            tools,
            server.language_tag.unwrap_or_else(|| "en".to_string()),
        )
        .map_err(|e| PipelineError::CorpusSchemaError(e.to_string()))?;
        manifests.push(manifest);
    }

    // 3. Deduplicate servers with identical (name, description) tool sets,
    //    keeping the lexicographically first server id.
    let mut by_toolset: BTreeMap<Vec<(String, String)>, McpServerManifest> = BTreeMap::new();
    for manifest in manifests {
        let key: Vec<(String, String)> = manifest
            .tools
            .iter()
            .map(|t| (t.name.clone(), t.description.clone()))
            .collect();
        match by_toolset.get(&key) {
            Some(existing) if existing.server_id <= manifest.server_id => {
                report.servers_dropped_duplicate += 1;
            }
            Some(_) => {
                report.servers_dropped_duplicate += 1;
                by_toolset.insert(key, manifest);
            }
            None => {
                by_toolset.insert(key, manifest);
            }
        }
    }

    // 4. Minimum size for wrong-match simulation.
    let mut retained: Vec<McpServerManifest> = Vec::new();
    for manifest in by_toolset.into_values() {
        if manifest.tools.len() < 2 * n_tools as usize {
            report.servers_dropped_too_small += 1;
        } else {
            retained.push(manifest);
        }
    }
    retained.sort_by(|a, b| a.server_id.cmp(&b.server_id));
    report.servers_retained = retained.len();

    let retained_index: BTreeMap<&str, &McpServerManifest> =
        retained.iter().map(|m| (m.server_id.as_str(), m)).collect();

    // 5. Tasks: every referenced tool must resolve inside one retained
    //    server, with the task's tool count in range.
    let mut samples = Vec::new();
    for (idx, task) in corpus.tasks.iter().enumerate() {
        let servers: BTreeSet<&str> = task.tools.iter().map(|t| t.server_id.as_str()).collect();
        if servers.len() != 1 {
            continue;
        }
        let server_id = servers.into_iter().next().unwrap();
        let Some(manifest) = retained_index.get(server_id) else {
            continue;
        };
        let mut tools = Vec::new();
        let mut ok = true;
        for tool_ref in &task.tools {
            match manifest.tool_by_name(&tool_ref.name) {
                Some(tool) => tools.push(tool.clone()),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || !(1..=3).contains(&tools.len()) {
            continue;
        }
        match TaskSample::new(
            format!("toucan-{idx}"),
            task.task_text.clone(),
            tools,
            SampleSource::Toucan,
        ) {
            Ok(sample) => samples.push(sample),
            Err(_) => continue,
        }
    }
    report.tasks_retained = samples.len();

    Ok((retained, samples, report))
}
