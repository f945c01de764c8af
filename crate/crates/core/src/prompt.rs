//! Prompt templates, ancestor history rendering, the prompt pool and its
//! offline evolution.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, ModelSpec, RequestTag};
use crate::model::{ExecStatus, ExecutionOutcome, NodeRecord, TaskSpec, ToolDescription};
use crate::sampling::{node_choice, Stream};

pub const TOOLSET_PLACEHOLDER: &str = "{toolset_descs}";
pub const HISTORY_PLACEHOLDER: &str = "{chat_history}";
pub const QUERY_PLACEHOLDER: &str = "{query}";
pub const PLACEHOLDERS: [&str; 3] = [TOOLSET_PLACEHOLDER, HISTORY_PLACEHOLDER, QUERY_PLACEHOLDER];

pub const TRUNCATION_SUFFIX: &str = "…[truncated]";

/// Instruction placed ahead of the ancestor history for every non-root node.
pub const REFLECTION_INSTRUCTION: &str = "Based on the provided chat history, reflect on the code and its execution. Identify potential issues or areas for optimization and provide specific suggestions to refine and improve the code. Consider edge cases, efficiency, and clarity in your reflections.";

/// Instruction prepended to a template body when asking a model for a variant.
pub const EVOLUTION_INSTRUCTION: &str = "In order to guide the diversity of results and enhance the performance through ensemble methods, we need to increase the diversity of prompts. We diversify the current prompt while maintaining consistency in core content, aiming for orthogonal expressions or prompts that lead to different directions and divergent thinking.";

const EVOLUTION_SUFFIX: &str = "Return only the rewritten prompt. Keep the placeholders {toolset_descs}, {chat_history} and {query} exactly once each.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{id}`: {reason}")]
    Template { id: String, reason: String },
    #[error("prompt pool: {0}")]
    Pool(String),
    #[error("prompt evolution produced no valid template ({} discarded)", .0.len())]
    EvolutionFailed(Vec<Discard>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Root,
    Evolved,
    HandEdited,
}

impl Provenance {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "root" => Some(Provenance::Root),
            "evolved" => Some(Provenance::Evolved),
            "hand_edited" => Some(Provenance::HandEdited),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Provenance::Root => "root",
            Provenance::Evolved => "evolved",
            Provenance::HandEdited => "hand_edited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub provenance: Provenance,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self, PromptError> {
        let t = Self {
            id: id.into(),
            body: body.into(),
            provenance,
        };
        t.validate()?;
        Ok(t)
    }

    /// Every placeholder must occur exactly once.
    pub fn validate(&self) -> Result<(), PromptError> {
        for p in PLACEHOLDERS {
            let n = self.body.matches(p).count();
            if n != 1 {
                return Err(PromptError::Template {
                    id: self.id.clone(),
                    reason: format!("placeholder {p} occurs {n} times (expected 1)"),
                });
            }
        }
        Ok(())
    }

    /// Parses a template file: a `---` delimited header with `id` and
    /// `provenance`, followed by the body verbatim.
    pub fn parse_file(text: &str) -> Result<Self, PromptError> {
        let bad = |reason: &str| PromptError::Pool(format!("template file: {reason}"));
        let rest = text
            .strip_prefix("---\n")
            .or_else(|| text.strip_prefix("---\r\n"))
            .ok_or_else(|| bad("missing front-matter header"))?;
        let mut id = None;
        let mut provenance = None;
        let mut offset = 0;
        let mut closed = false;
        for line in rest.split_inclusive('\n') {
            offset += line.len();
            let line = line.trim_end();
            if line == "---" {
                closed = true;
                break;
            }
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| bad("header line without `:`"))?;
            match k.trim() {
                "id" => id = Some(v.trim().to_string()),
                "provenance" => {
                    provenance = Some(
                        Provenance::parse(v.trim()).ok_or_else(|| bad("unknown provenance"))?,
                    )
                }
                _ => {}
            }
        }
        if !closed {
            return Err(bad("unterminated front-matter header"));
        }
        Self::new(
            id.ok_or_else(|| bad("header lacks `id`"))?,
            &rest[offset..],
            provenance.ok_or_else(|| bad("header lacks `provenance`"))?,
        )
    }

    pub fn to_file(&self) -> String {
        format!(
            "---\nid: {}\nprovenance: {}\n---\n{}",
            self.id,
            self.provenance.as_str(),
            self.body
        )
    }
}

/// Non-empty set of templates with unique ids. Built offline; the tree only
/// reads it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPool {
    templates: Vec<PromptTemplate>,
}

const DEFAULT_POOL: [&str; 6] = [
    include_str!("../assets/prompts/01_root.md"),
    include_str!("../assets/prompts/02_worked_example.md"),
    include_str!("../assets/prompts/03_query_first.md"),
    include_str!("../assets/prompts/04_structured.md"),
    include_str!("../assets/prompts/05_api_notes.md"),
    include_str!("../assets/prompts/06_divergent.md"),
];

impl PromptPool {
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self, PromptError> {
        if templates.is_empty() {
            return Err(PromptError::Pool("pool is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &templates {
            t.validate()?;
            if !seen.insert(t.id.as_str()) {
                return Err(PromptError::Pool(format!("duplicate template id `{}`", t.id)));
            }
        }
        Ok(Self { templates })
    }

    /// The curated six-template pool shipped with the crate.
    pub fn default_pool() -> Self {
        let templates = DEFAULT_POOL
            .iter()
            .map(|t| PromptTemplate::parse_file(t).expect("bundled template is valid"))
            .collect();
        Self::new(templates).expect("bundled pool is valid")
    }

    /// The root template alone.
    pub fn root_only() -> Self {
        let root = PromptTemplate::parse_file(DEFAULT_POOL[0]).expect("bundled template is valid");
        Self::new(vec![root]).expect("singleton pool is valid")
    }

    /// Loads one template per file from `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let io = |e: std::io::Error| PromptError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut templates = Vec::with_capacity(paths.len());
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            templates.push(PromptTemplate::parse_file(&text).map_err(|e| {
                PromptError::Pool(format!("{}: {e}", path.display()))
            })?);
        }
        Self::new(templates)
    }

    /// Writes each template to `dir/<nn>_<id>.md`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), PromptError> {
        std::fs::create_dir_all(dir).map_err(|e| PromptError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for (i, t) in self.templates.iter().enumerate() {
            let path = dir.join(format!("{:02}_{}.md", i + 1, t.id));
            std::fs::write(&path, t.to_file()).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        Ok(())
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Uniform template choice for the node at `coords = (layer, index)`.
pub fn sample_prompt(pool: &PromptPool, seed: u64, coords: (u32, u32)) -> &PromptTemplate {
    let i = node_choice(seed, coords.0, coords.1, Stream::Prompt, pool.len());
    &pool.templates[i]
}

/// Tool descriptions in toolset order, one block per tool.
pub fn render_toolset(tools: &[ToolDescription]) -> String {
    tools
        .iter()
        .map(|t| {
            let mut block = format!(
                "- name: {}\n  description: {}\n  fn_signature: {}",
                t.name, t.description, t.fn_signature
            );
            if let Some(example) = &t.output_example {
                block.push_str("\n  output_example: ");
                block.push_str(example);
            }
            block
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes the three placeholders in a single pass; substituted text is
/// never rescanned, so braces inside tool descriptions or history survive.
pub fn render_root_prompt(
    template: &PromptTemplate,
    task: &TaskSpec,
    history: &str,
) -> Result<String, PromptError> {
    template.validate()?;
    let toolset = render_toolset(&task.tools);
    let mut spans: Vec<(usize, &str, &str)> = vec![
        (template.body.find(TOOLSET_PLACEHOLDER).unwrap_or(0), TOOLSET_PLACEHOLDER, toolset.as_str()),
        (template.body.find(HISTORY_PLACEHOLDER).unwrap_or(0), HISTORY_PLACEHOLDER, history),
        (template.body.find(QUERY_PLACEHOLDER).unwrap_or(0), QUERY_PLACEHOLDER, task.query.as_str()),
    ];
    spans.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(template.body.len() + toolset.len() + history.len());
    let mut cursor = 0;
    for (pos, placeholder, value) in spans {
        out.push_str(&template.body[cursor..pos]);
        out.push_str(value);
        cursor = pos + placeholder.len();
    }
    out.push_str(&template.body[cursor..]);
    Ok(out)
}

/// Cuts `text` to `cap` characters, appending the truncation marker when cut.
pub fn truncate_field(text: &str, cap: usize) -> String {
    match text.char_indices().nth(cap) {
        Some((byte, _)) => format!("{}{}", &text[..byte], TRUNCATION_SUFFIX),
        None => text.to_string(),
    }
}

/// Text shown for an execution outcome: the value on success, otherwise
/// whatever the program wrote, or `None` when it wrote nothing.
pub fn outcome_text(node: &NodeRecord) -> String {
    observation_text(&node.outcome)
}

/// [`outcome_text`] for a bare outcome.
pub fn observation_text(o: &ExecutionOutcome) -> String {
    if o.status == ExecStatus::Ok {
        return o.value.clone();
    }
    let parts: Vec<&str> = [o.stdout.trim_end(), o.stderr.trim_end()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    if parts.is_empty() {
        "None".to_string()
    } else {
        parts.join("\n")
    }
}

fn turn_header(turn: usize) -> String {
    format!("--- turn {turn} ---")
}

fn history_block(turn: usize, node: &NodeRecord, cap: usize) -> String {
    format!(
        "{}\nThought:\n{}\nCode:\n{}\nExecution status: {}\nExecution output:\n{}",
        turn_header(turn),
        truncate_field(&node.thought, cap),
        truncate_field(&node.code, cap),
        node.outcome.status,
        truncate_field(&outcome_text(node), cap),
    )
}

/// Renders the thought, code and outcome of every ancestor, root first.
pub fn build_history(ancestors: &[&NodeRecord], cap: usize) -> String {
    build_history_budgeted(ancestors, cap, None)
}

/// Like [`build_history`], but when the whole history exceeds `budget`
/// characters the oldest turns are collapsed to their header first.
pub fn build_history_budgeted(ancestors: &[&NodeRecord], cap: usize, budget: Option<usize>) -> String {
    let mut blocks: Vec<String> = ancestors
        .iter()
        .enumerate()
        .map(|(j, node)| history_block(j + 1, node, cap))
        .collect();
    if let Some(budget) = budget {
        let total = |blocks: &[String]| -> usize {
            blocks.iter().map(|b| b.chars().count()).sum::<usize>() + 2 * blocks.len().saturating_sub(1)
        };
        for j in 0..blocks.len() {
            if total(&blocks) <= budget {
                break;
            }
            blocks[j] = format!("{}\n{}", turn_header(j + 1), TRUNCATION_SUFFIX);
        }
    }
    blocks.join("\n\n")
}

/// A candidate dropped during evolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discard {
    pub candidate: usize,
    pub reason: String,
}

impl fmt::Display for Discard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "candidate {}: {}", self.candidate, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evolution {
    pub templates: Vec<PromptTemplate>,
    pub discarded: Vec<Discard>,
}

/// The request text used to ask for one variant of `base`.
pub fn evolution_prompt(base: &PromptTemplate) -> String {
    format!("{EVOLUTION_INSTRUCTION}\n{EVOLUTION_SUFFIX}\n\n{}", base.body)
}

/// Asks `model` for `count` variants of `base`. Variants that lose a
/// placeholder (or fail to generate) are discarded and reported.
pub fn evolve_prompts(
    base: &PromptTemplate,
    count: usize,
    model: &ModelSpec,
    gateway: &Gateway,
) -> Result<Evolution, PromptError> {
    if count == 0 {
        return Err(PromptError::Pool("evolution count must be >= 1".into()));
    }
    let prompt = evolution_prompt(base);
    let mut templates = Vec::new();
    let mut discarded = Vec::new();
    for candidate in 1..=count {
        let request = CompletionRequest::new(model, prompt.clone(), RequestTag::PromptEvolution)
            .scope(base.id.clone())
            .ordinal(candidate as u32);
        let body = match gateway.complete(&request) {
            Ok(text) => text,
            Err(e) => {
                discarded.push(Discard {
                    candidate,
                    reason: format!("generation failed: {e}"),
                });
                continue;
            }
        };
        let body = body.trim().to_string() + "\n";
        match PromptTemplate::new(format!("{}-evo{candidate}", base.id), body, Provenance::Evolved) {
            Ok(t) => templates.push(t),
            Err(e) => discarded.push(Discard {
                candidate,
                reason: e.to_string(),
            }),
        }
    }
    for d in &discarded {
        tracing::warn!("discarded evolved prompt: {d}");
    }
    if templates.is_empty() {
        return Err(PromptError::EvolutionFailed(discarded));
    }
    Ok(Evolution {
        templates,
        discarded,
    })
}
