//! Versioned prompt assets for the matchers and the task generator, plus
//! the substitution helpers that parameterize them.
//!
//! The assets are stored verbatim under `assets/prompts/` and embedded at
//! compile time; tests pin their exact bytes.

use crate::domain::ToolDescriptor;

/// System prompt asking the model for an idealized tool description inside
/// a `<tool_assistant>` block.
pub const SEMSIM_REFORMULATE_SYSTEM: &str =
    include_str!("../assets/prompts/semsim_reformulate_system.txt");

/// Guardrail system prompt requesting a structured appropriateness flag.
pub const LLMRES_SYSTEM: &str = include_str!("../assets/prompts/llmres_system.txt");

/// Single-tool task generation system prompt with `[Tool Name]` /
/// `[Tool Description]` placeholders.
pub const TASKGEN_SINGLE_SYSTEM: &str = include_str!("../assets/prompts/taskgen_single_system.txt");

/// Multi-tool task generation system prompt with a `[Tools Information]`
/// placeholder.
pub const TASKGEN_MULTI_SYSTEM: &str = include_str!("../assets/prompts/taskgen_multi_system.txt");

/// Task generation user prompt with an `{n_tasks}` placeholder.
pub const TASKGEN_USER: &str = include_str!("../assets/prompts/taskgen_user.txt");

/// One tool's info block, formatted the way the single-tool prompt presents
/// the tool; multi-tool prompts concatenate these.
pub fn tool_info_block(tool: &ToolDescriptor) -> String {
    format!(
        "**Tool Name:**\n`{}`\n\n**Tool Description:**\n`{}`",
        tool.name, tool.description
    )
}

/// Single- or multi-tool generation system prompt for a tool set.
pub fn taskgen_system(tools: &[ToolDescriptor]) -> String {
    if tools.len() == 1 {
        TASKGEN_SINGLE_SYSTEM
            .replace("[Tool Name]", &tools[0].name)
            .replace("[Tool Description]", &tools[0].description)
    } else {
        let blocks: Vec<String> = tools.iter().map(tool_info_block).collect();
        TASKGEN_MULTI_SYSTEM.replace("[Tools Information]", &blocks.join("\n\n"))
    }
}

pub fn taskgen_user(n_tasks: u32) -> String {
    TASKGEN_USER.replace("{n_tasks}", &n_tasks.to_string())
}

/// Input JSON for the guardrail matcher. Field order follows the prompt's
/// field listing, so the object is built by hand rather than through a map.
pub fn llmres_input_json(task_text: &str, tool: &ToolDescriptor) -> String {
    format!(
        "{{\"original prompt\": {}, \"tool name\": {}, \"tool description\": {}}}",
        serde_json::to_string(task_text).expect("string serializes"),
        serde_json::to_string(&tool.name).expect("string serializes"),
        serde_json::to_string(&tool.description).expect("string serializes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool() -> ToolDescriptor {
        ToolDescriptor::new("azure", "search_service_list", "Enumerate search services").unwrap()
    }

    #[test]
    fn reformulate_prompt_pins_format_block() {
        assert!(SEMSIM_REFORMULATE_SYSTEM.contains("<tool_assistant>"));
        assert!(SEMSIM_REFORMULATE_SYSTEM.contains("tool: [describe the tool functionality]"));
        assert!(
            SEMSIM_REFORMULATE_SYSTEM.ends_with("Do not provide any explanation or commentary.")
        );
    }

    #[test]
    fn llmres_prompt_pins_input_fields() {
        assert!(LLMRES_SYSTEM.starts_with("You are a guardrail agent."));
        assert!(LLMRES_SYSTEM.contains("- original prompt: the original user prompt"));
        assert!(LLMRES_SYSTEM.trim_end().ends_with("# input"));
    }

    #[test]
    fn taskgen_single_substitutes_tool_fields() {
        let sys = taskgen_system(std::slice::from_ref(&tool()));
        assert!(sys.contains("`search_service_list`"));
        assert!(sys.contains("`Enumerate search services`"));
        assert!(!sys.contains("[Tool Name]"));
    }

    #[test]
    fn taskgen_multi_substitutes_blocks() {
        let t1 = tool();
        let t2 = ToolDescriptor::new("azure", "subscription_list", "List subscriptions").unwrap();
        let sys = taskgen_system(&[t1, t2]);
        assert!(sys.contains("a set of tools"));
        assert_eq!(sys.matches("**Tool Name:**").count(), 2);
        assert!(!sys.contains("[Tools Information]"));
    }

    #[test]
    fn taskgen_user_substitutes_count() {
        assert!(taskgen_user(3).contains("generate 3 corresponding output example(s)"));
    }

    #[test]
    fn llmres_input_preserves_field_order() {
        let json = llmres_input_json("find stuff", &tool());
        let op = json.find("original prompt").unwrap();
        let tn = json.find("tool name").unwrap();
        let td = json.find("tool description").unwrap();
        assert!(op < tn && tn < td);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["original prompt"], "find stuff");
        assert_eq!(v["tool name"], "search_service_list");
    }
}
