//! MCP manifest ingestion and tool-description cleanup.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::domain::{McpServerManifest, ToolDescriptor};

use super::PipelineError;

#[derive(Debug, Deserialize)]
struct RawTool {
    name: String,
    description: String,
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    server_id: String,
    #[serde(default)]
    language_tag: Option<String>,
    tools: Vec<RawTool>,
}

#[derive(Debug, Deserialize)]
struct RawJsonlRow {
    server_id: String,
    name: String,
    description: String,
}

/// Reads one manifest file: either a JSON document
/// `{"server_id", "language_tag"?, "tools": [{"name", "description"}]}`
/// or JSONL with one `{"server_id", "name", "description"}` row per tool.
///
/// Tools come out sorted by name with descriptions preserved verbatim and
/// canonical scopes computed.
pub fn ingest_mcp_manifest(path: &Path) -> Result<McpServerManifest, PipelineError> {
    let body = std::fs::read_to_string(path)?;
    let err = |line: Option<usize>, message: String| PipelineError::ManifestParse {
        path: path.display().to_string(),
        line,
        message,
    };
    if body.trim().is_empty() {
        return Err(err(None, "file is empty".into()));
    }

    let build = |server_id: String,
                 language_tag: String,
                 raw: Vec<(usize, String, String)>|
     -> Result<McpServerManifest, PipelineError> {
        if raw.is_empty() {
            return Err(err(None, "manifest has no tools".into()));
        }
        let mut tools = Vec::with_capacity(raw.len());
        for (line, name, description) in raw {
            let tool = ToolDescriptor::new(&server_id, &name, description)
                .map_err(|e| err(Some(line), e.to_string()))?;
            tools.push(tool);
        }
        McpServerManifest::new(server_id, tools, language_tag).map_err(|e| err(None, e.to_string()))
    };

    // A JSON document parses as a single value; otherwise treat as JSONL.
    match serde_json::from_str::<RawManifest>(&body) {
        Ok(raw) => build(
            raw.server_id.clone(),
            raw.language_tag.unwrap_or_else(|| "en".to_string()),
            raw.tools
                .into_iter()
                .enumerate()
                .map(|(i, t)| (i + 1, t.name, t.description))
                .collect(),
        ),
        Err(doc_err) => {
            let mut server_id: Option<String> = None;
            let mut rows = Vec::new();
            for (i, line) in body.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: RawJsonlRow = serde_json::from_str(line).map_err(|e| {
                    err(
                        Some(i + 1),
                        format!("not a manifest document ({doc_err}) nor a tool row: {e}"),
                    )
                })?;
                match &server_id {
                    None => server_id = Some(row.server_id.clone()),
                    Some(existing) if *existing != row.server_id => {
                        return Err(err(
                            Some(i + 1),
                            format!(
                                "mixed server ids in one manifest: {existing:?} vs {:?}",
                                row.server_id
                            ),
                        ));
                    }
                    _ => {}
                }
                rows.push((i + 1, row.name, row.description));
            }
            let server_id = server_id.ok_or_else(|| err(None, "no tool rows".into()))?;
            build(server_id, "en".to_string(), rows)
        }
    }
}

/// Ingests every `*.json` / `*.jsonl` file in a directory, sorted by file
/// name for stable ordering.
pub fn ingest_manifest_dir(dir: &Path) -> Result<Vec<McpServerManifest>, PipelineError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e == "json" || e == "jsonl")
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| ingest_mcp_manifest(p)).collect()
}

fn arg_heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(args|arguments|parameters|params)\s*:\s*$").unwrap())
}

fn arg_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*[-*]?\s*[A-Za-z_][A-Za-z0-9_.\[\]]*\s*\([^)]*\)\s*:").unwrap()
    })
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Removes function-argument detail from a tool description: sections
/// headed `Args:` / `Arguments:` / `Parameters:` / `Params:` together with
/// their indented block, and bare runs of `name (type): ...` lines.
/// Idempotent; a description without such blocks passes through unchanged.
pub fn strip_argument_details(description: &str) -> String {
    let lines: Vec<&str> = description.lines().collect();
    let mut kept: Vec<&str> = Vec::with_capacity(lines.len());
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if arg_heading_re().is_match(line) {
            let heading_indent = indent_of(line);
            i += 1;
            // Swallow the block: indented lines and interior blanks that are
            // followed by more indented lines.
            while i < lines.len() {
                let candidate = lines[i];
                if candidate.trim().is_empty() {
                    let continues = lines.get(i + 1).is_some_and(|next| {
                        !next.trim().is_empty() && indent_of(next) > heading_indent
                    });
                    if continues {
                        i += 1;
                        continue;
                    }
                    // Consume the trailing blank so prose joins cleanly.
                    i += 1;
                    break;
                }
                if indent_of(candidate) > heading_indent || arg_line_re().is_match(candidate) {
                    i += 1;
                } else {
                    break;
                }
            }
            continue;
        }
        if arg_line_re().is_match(line) {
            i += 1;
            continue;
        }
        kept.push(line);
        i += 1;
    }

    // Collapse runs of blank lines left behind and trim the edges.
    let mut out: Vec<&str> = Vec::with_capacity(kept.len());
    for line in kept {
        if line.trim().is_empty() && out.last().is_some_and(|l| l.trim().is_empty()) {
            continue;
        }
        out.push(line);
    }
    while out.first().is_some_and(|l| l.trim().is_empty()) {
        out.remove(0);
    }
    while out.last().is_some_and(|l| l.trim().is_empty()) {
        out.pop();
    }
    out.join("\n")
}
