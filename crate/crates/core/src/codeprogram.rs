//! One node, end to end: render the prompt, make a single completion call,
//! and split the reply into its thought and program.

use crate::gateway::{CompletionRequest, Gateway, ModelSpec, RequestTag};
use crate::model::{NodeRecord, TaskSpec};
use crate::prompt::{build_history_budgeted, render_root_prompt, PromptError, PromptTemplate, REFLECTION_INSTRUCTION};

pub const THOUGHT_OPEN: &str = "<thought>";
pub const THOUGHT_CLOSE: &str = "</thought>";
pub const EXECUTE_OPEN: &str = "<execute>";
pub const EXECUTE_CLOSE: &str = "</execute>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftNode {
    pub thought: String,
    pub code: String,
    pub raw_output: String,
    pub parse_ok: bool,
    /// Set when the generation call itself failed.
    pub generation_error: Option<String>,
}

impl DraftNode {
    /// Why this draft cannot be executed, if it cannot.
    pub fn failure_note(&self) -> Option<String> {
        if let Some(e) = &self.generation_error {
            return Some(format!("node_generation_failed: {e}"));
        }
        if self.parse_ok {
            return None;
        }
        let mut missing = Vec::new();
        if self.thought.is_empty() {
            missing.push("<thought>…</thought>");
        }
        if self.code.is_empty() {
            missing.push("<execute>…</execute>");
        }
        Some(format!("parse_failure: missing or malformed {}", missing.join(" and ")))
    }
}

/// Byte range of the content between the first `open` at or after `from`
/// (and before `limit`) and the next `close`. `Err(())` means an opening tag
/// was found without its closing tag.
fn span(raw: &str, open: &str, close: &str, from: usize, limit: usize) -> Result<Option<(usize, usize)>, ()> {
    let Some(rel) = raw[from..limit].find(open) else {
        return Ok(None);
    };
    let start = from + rel + open.len();
    match raw[start..].find(close) {
        Some(end) => Ok(Some((start, start + end))),
        None => Err(()),
    }
}

/// Extracts the first `<thought>` span and the first `<execute>` span that is
/// not inside that thought. Never fails; malformed input yields `parse_ok = false`.
pub fn parse_tagged(raw: &str) -> DraftNode {
    let mut draft = DraftNode {
        thought: String::new(),
        code: String::new(),
        raw_output: raw.to_string(),
        parse_ok: false,
        generation_error: None,
    };
    let thought = span(raw, THOUGHT_OPEN, THOUGHT_CLOSE, 0, raw.len());
    let mut thought_ok = false;
    // region the execute span may not start inside
    let (skip_start, skip_end) = match thought {
        Ok(Some((s, e))) => {
            draft.thought = raw[s..e].trim().to_string();
            thought_ok = true;
            (s - THOUGHT_OPEN.len(), e + THOUGHT_CLOSE.len())
        }
        Ok(None) => (raw.len(), raw.len()),
        // unclosed thought: everything after the tag is suspect
        Err(()) => {
            let s = raw.find(THOUGHT_OPEN).unwrap_or(raw.len());
            (s, raw.len())
        }
    };
    let code = match span(raw, EXECUTE_OPEN, EXECUTE_CLOSE, skip_end, raw.len()) {
        Ok(None) => span(raw, EXECUTE_OPEN, EXECUTE_CLOSE, 0, skip_start),
        other => other,
    };
    let mut code_ok = false;
    if let Ok(Some((s, e))) = code {
        draft.code = raw[s..e].trim().to_string();
        code_ok = true;
    }
    draft.parse_ok = thought_ok && code_ok && !draft.thought.is_empty() && !draft.code.is_empty();
    draft
}

/// Canonical tagged rendering of a thought and program.
pub fn render_tagged(thought: &str, code: &str) -> String {
    format!("{THOUGHT_OPEN}{thought}{THOUGHT_CLOSE}\n{EXECUTE_OPEN}\n{code}\n{EXECUTE_CLOSE}")
}

/// Everything one node generation needs besides the task.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext<'a> {
    pub template: &'a PromptTemplate,
    pub model: &'a ModelSpec,
    pub temperature: f64,
    pub history_char_cap: usize,
    pub history_budget: Option<usize>,
    /// Logical ordinal of this node within its task, for scripted routing.
    pub ordinal: Option<u32>,
}

/// The full prompt for a node: the template rendered with the ancestors'
/// history, prefixed by the reflection instruction for non-root nodes.
pub fn node_prompt(task: &TaskSpec, ancestors: &[&NodeRecord], ctx: &NodeContext<'_>) -> Result<String, PromptError> {
    let history = if ancestors.is_empty() {
        String::new()
    } else {
        format!(
            "{REFLECTION_INSTRUCTION}\n\n{}",
            build_history_budgeted(ancestors, ctx.history_char_cap, ctx.history_budget)
        )
    };
    render_root_prompt(ctx.template, task, &history)
}

/// Generates one node with exactly one gateway call. Gateway failures come
/// back as a draft with `parse_ok = false` and the error noted in `raw_output`.
pub fn generate_node(
    task: &TaskSpec,
    ancestors: &[&NodeRecord],
    ctx: &NodeContext<'_>,
    gateway: &Gateway,
) -> Result<(String, DraftNode), PromptError> {
    let prompt = node_prompt(task, ancestors, ctx)?;
    let mut request = CompletionRequest::new(ctx.model, prompt.clone(), RequestTag::NodeGeneration)
        .temperature(ctx.temperature)
        .scope(task.id.clone());
    request.ordinal = ctx.ordinal;
    let draft = match gateway.complete(&request) {
        Ok(raw) => parse_tagged(&raw),
        Err(e) => DraftNode {
            thought: String::new(),
            code: String::new(),
            raw_output: format!("[generation error] {e}"),
            parse_ok: false,
            generation_error: Some(e.to_string()),
        },
    };
    Ok((prompt, draft))
}
