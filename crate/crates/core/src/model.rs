//! Shared domain types: tasks, tool descriptions, node and tree records,
//! plus the answer-checking and word-counting primitives every strategy
//! reports through.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::aggregator::normalize_answer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid task `{task}`: {reason}")]
    InvalidTask { task: String, reason: String },
    #[error("invalid answer checker: {0}")]
    InvalidChecker(String),
    #[error("invalid tree config: {0}")]
    InvalidConfig(String),
    #[error("invalid node id `{0}` (expected `<layer>-<index>`)")]
    InvalidNodeId(String),
}

/// One callable tool as presented to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescription {
    pub name: String,
    pub description: String,
    pub fn_signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_example: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    KeywordsAll,
    KeywordsAny,
    ExactNormalized,
}

/// Grades a final response against the expected output. Used only by the
/// benchmark harness and the baseline `gt_match` termination mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerChecker {
    pub mode: CheckMode,
    pub terms: Vec<String>,
}

impl AnswerChecker {
    pub fn keywords_all<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            mode: CheckMode::KeywordsAll,
            terms: terms.into_iter().map(Into::into).collect(),
        }
    }

    pub fn keywords_any<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            mode: CheckMode::KeywordsAny,
            terms: terms.into_iter().map(Into::into).collect(),
        }
    }

    pub fn exact(term: impl Into<String>) -> Self {
        Self {
            mode: CheckMode::ExactNormalized,
            terms: vec![term.into()],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.terms.is_empty() {
            return Err(ModelError::InvalidChecker("terms must be non-empty".into()));
        }
        if self.mode == CheckMode::ExactNormalized && self.terms.len() != 1 {
            return Err(ModelError::InvalidChecker(format!(
                "exact_normalized takes exactly one term, got {}",
                self.terms.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub query: String,
    pub tools: Vec<ToolDescription>,
    pub checker: AnswerChecker,
    #[serde(default)]
    pub category: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidTask {
            task: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("id is empty".into()));
        }
        if self.query.trim().is_empty() {
            return Err(invalid("query is empty".into()));
        }
        if self.tools.is_empty() {
            return Err(invalid("toolset is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for tool in &self.tools {
            if !seen.insert(tool.name.as_str()) {
                return Err(invalid(format!("duplicate tool `{}`", tool.name)));
            }
            if tool.fn_signature.trim().is_empty() {
                return Err(invalid(format!("tool `{}` has empty fn_signature", tool.name)));
            }
        }
        self.checker.validate()
    }

    pub fn tool_names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.name.clone()).collect()
    }
}

/// Position of a node in the tree: layer `l` (1-based) and index `m` within
/// the layer (1-based). Orders by layer, then index, and renders as `l-m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub layer: u32,
    pub index: u32,
}

impl NodeId {
    pub fn new(layer: u32, index: u32) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.layer, self.index)
    }
}

impl FromStr for NodeId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidNodeId(s.to_string());
        let (l, m) = s.split_once('-').ok_or_else(bad)?;
        let layer: u32 = l.parse().map_err(|_| bad())?;
        let index: u32 = m.parse().map_err(|_| bad())?;
        if layer == 0 || index == 0 {
            return Err(bad());
        }
        Ok(Self { layer, index })
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Exception,
    Timeout,
    Empty,
    ParseFailure,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::Exception => "exception",
            ExecStatus::Timeout => "timeout",
            ExecStatus::Empty => "empty",
            ExecStatus::ParseFailure => "parse_failure",
        }
    }
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of running one program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default)]
    pub value: String,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub duration_ms: u64,
}

impl ExecutionOutcome {
    /// Successful run. An empty (after trimming) value downgrades to `empty`.
    pub fn ok(value: impl Into<String>) -> Self {
        let value = value.into();
        let trimmed = value.trim().to_string();
        Self {
            status: if trimmed.is_empty() {
                ExecStatus::Empty
            } else {
                ExecStatus::Ok
            },
            stdout: value,
            value: trimmed,
            stderr: String::new(),
            duration_ms: 0,
        }
    }

    pub fn exception(stderr: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::Exception,
            value: String::new(),
            stdout: String::new(),
            stderr: stderr.into(),
            duration_ms: 0,
        }
    }

    pub fn empty() -> Self {
        Self {
            status: ExecStatus::Empty,
            value: String::new(),
            stdout: String::new(),
            stderr: String::new(),
            duration_ms: 0,
        }
    }

    pub fn timeout(duration_ms: u64) -> Self {
        Self {
            status: ExecStatus::Timeout,
            value: String::new(),
            stdout: String::new(),
            stderr: format!("execution exceeded {duration_ms} ms"),
            duration_ms,
        }
    }

    /// The code was never executed because generation or parsing failed.
    pub fn parse_failure(note: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::ParseFailure,
            value: String::new(),
            stdout: String::new(),
            stderr: note.into(),
            duration_ms: 0,
        }
    }

    pub fn with_duration(mut self, duration_ms: u64) -> Self {
        self.duration_ms = duration_ms;
        self
    }
}

/// The binary process label the tree grows on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Failure,
}

/// One CodeProgram node: thought, code, execution outcome, lineage and the
/// prompt/model it was sampled with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub thought: String,
    pub code: String,
    pub outcome: ExecutionOutcome,
    pub status: NodeStatus,
    pub prompt_id: String,
    pub model_id: String,
    pub prompt: String,
    pub raw_output: String,
}

impl NodeRecord {
    pub fn layer(&self) -> u32 {
        self.id.layer
    }

    pub fn index(&self) -> u32 {
        self.id.index
    }

    pub fn is_success(&self) -> bool {
        self.status == NodeStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Maximum number of layers (L).
    pub max_depth: u32,
    /// Maximum nodes per layer (M).
    pub max_width: u32,
    pub timeout_ms: u64,
    pub history_char_cap: usize,
    /// Optional budget over the whole rendered history; oldest turns shrink first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_budget: Option<usize>,
    pub temperature: f64,
    /// Model used for the final summarization; defaults to the winning node's model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator_model: Option<String>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            max_width: 3,
            timeout_ms: 10_000,
            history_char_cap: 2_000,
            history_budget: None,
            temperature: 0.1,
            aggregator_model: None,
        }
    }
}

impl TreeConfig {
    pub fn with_shape(max_depth: u32, max_width: u32) -> Self {
        Self {
            max_depth,
            max_width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_depth < 1 {
            return Err(ModelError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.max_width < 1 {
            return Err(ModelError::InvalidConfig("max_width must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ModelError::InvalidConfig("timeout_ms must be > 0".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ModelError::InvalidConfig("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Short label used in reports, e.g. `toc(3-3)`.
    pub fn label(&self) -> String {
        format!("toc({}-{})", self.max_depth, self.max_width)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub correct: bool,
    pub turns: u32,
    pub output_words: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub task_id: String,
    pub config: TreeConfig,
    pub seed: u64,
    pub nodes: Vec<NodeRecord>,
    pub layers_used: u32,
    pub collected: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<crate::aggregator::VoteResult>,
    pub final_answer: Option<String>,
    pub metrics: RunMetrics,
}

impl TreeRecord {
    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn layer(&self, layer: u32) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.iter().filter(move |n| n.id.layer == layer)
    }

    /// Ancestors of `id`, root first, excluding the node itself.
    pub fn ancestors(&self, id: NodeId) -> Vec<&NodeRecord> {
        let mut chain = Vec::new();
        let mut cursor = self.node(id).and_then(|n| n.parent_id);
        while let Some(pid) = cursor {
            match self.node(pid) {
                Some(parent) => {
                    chain.push(parent);
                    cursor = parent.parent_id;
                }
                None => break,
            }
        }
        chain.reverse();
        chain
    }

    pub fn successes(&self) -> Vec<&NodeRecord> {
        self.nodes.iter().filter(|n| n.is_success()).collect()
    }

    /// Checks the structural invariants of a grown tree and returns the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let cfg = &self.config;
        if self.layers_used > cfg.max_depth {
            return Err(format!(
                "layers_used {} exceeds max_depth {}",
                self.layers_used, cfg.max_depth
            ));
        }
        for l in 1..=self.layers_used {
            let width = self.layer(l).count() as u32;
            if width == 0 || width > cfg.max_width {
                return Err(format!("layer {l} has {width} nodes (max {})", cfg.max_width));
            }
        }
        for node in &self.nodes {
            if node.id.layer > self.layers_used {
                return Err(format!("node {} beyond layers_used", node.id));
            }
            if node.id.index > cfg.max_width {
                return Err(format!("node {} index exceeds width", node.id));
            }
            if node.status != crate::execution::classify_outcome(&node.outcome) {
                return Err(format!("node {} status disagrees with its outcome", node.id));
            }
            match (node.id.layer, node.parent_id) {
                (1, None) => {}
                (1, Some(_)) => return Err(format!("root node {} has a parent", node.id)),
                (_, None) => return Err(format!("node {} has no parent", node.id)),
                (l, Some(pid)) => {
                    let parent = self
                        .node(pid)
                        .ok_or_else(|| format!("node {} parent {pid} missing", node.id))?;
                    if parent.id.layer + 1 != l {
                        return Err(format!("node {} parent {pid} not in previous layer", node.id));
                    }
                    if parent.is_success() {
                        return Err(format!("node {} grown from successful parent {pid}", node.id));
                    }
                }
            }
        }
        let expected: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.is_success())
            .map(|n| n.id)
            .collect();
        if expected != self.collected {
            return Err("collected set differs from the success nodes".into());
        }
        if !self.nodes.is_empty() && self.metrics.turns != self.layers_used {
            return Err("turns differ from layers_used".into());
        }
        Ok(())
    }
}

/// Number of maximal non-whitespace runs in `text`.
pub fn count_output_words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Grades `response` with the task's checker. Keyword matching is
/// case-insensitive substring search.
pub fn check_answer(response: &str, checker: &AnswerChecker) -> bool {
    let haystack = response.to_lowercase();
    let contains = |term: &String| haystack.contains(&term.to_lowercase());
    match checker.mode {
        CheckMode::KeywordsAll => checker.terms.iter().all(contains),
        CheckMode::KeywordsAny => checker.terms.iter().any(contains),
        CheckMode::ExactNormalized => checker
            .terms
            .first()
            .map(|t| normalize_answer(response) == normalize_answer(t))
            .unwrap_or(false),
    }
}
