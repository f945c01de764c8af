//! Running node programs and turning their outcome into the tree's
//! success/failure bit.
//!
//! Two executors are provided: [`ScriptedExecutor`], a deterministic lookup
//! table used for tests and harness fixtures, and [`sandbox::SandboxPool`],
//! which drives external worker processes over the framed protocol in
//! [`protocol`].

pub mod protocol;
pub mod sandbox;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, ModelSpec};
use crate::model::{ExecStatus, ExecutionOutcome, NodeStatus, ToolDescription};

pub use protocol::ProtocolError;
pub use sandbox::{SandboxPool, SandboxWorker, WorkerCommand};

#[derive(Debug, Error)]
pub enum ExecError {
    /// The worker broke the wire protocol. Aborts the run.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot start worker: {0}")]
    Spawn(String),
    #[error("executor config: {0}")]
    Config(String),
}

impl From<ProtocolError> for ExecError {
    fn from(e: ProtocolError) -> Self {
        ExecError::Protocol(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorLimits {
    pub timeout_ms: u64,
    pub max_output_bytes: u64,
    pub max_tool_calls: u32,
}

impl Default for ExecutorLimits {
    fn default() -> Self {
        Self {
            timeout_ms: 10_000,
            max_output_bytes: 64 * 1024,
            max_tool_calls: 256,
        }
    }
}

impl ExecutorLimits {
    pub fn with_timeout(timeout_ms: u64) -> Self {
        Self {
            timeout_ms,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.timeout_ms == 0 || self.max_output_bytes == 0 || self.max_tool_calls == 0 {
            return Err(ExecError::Config("executor limits must all be positive".into()));
        }
        Ok(())
    }
}

/// Success iff the program ran cleanly and produced a non-empty answer.
/// Every other status (error, timeout, no output, unparseable node) is a
/// failure. Content of the value is never inspected.
pub fn classify_outcome(outcome: &ExecutionOutcome) -> NodeStatus {
    match outcome.status {
        ExecStatus::Ok if !outcome.value.trim().is_empty() => NodeStatus::Success,
        _ => NodeStatus::Failure,
    }
}

/// Where helper-tool completions requested by running code are sent.
#[derive(Clone, Copy)]
pub struct HelperRoute<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a ModelSpec,
    pub scope: &'a str,
}

/// One program to run.
#[derive(Clone, Copy)]
pub struct ExecJob<'a> {
    pub code: &'a str,
    pub tools: &'a [ToolDescription],
    pub limits: ExecutorLimits,
    pub helper: Option<HelperRoute<'a>>,
}

impl<'a> ExecJob<'a> {
    pub fn new(code: &'a str, tools: &'a [ToolDescription], limits: ExecutorLimits) -> Self {
        Self {
            code,
            tools,
            limits,
            helper: None,
        }
    }

    pub fn with_helper(mut self, helper: HelperRoute<'a>) -> Self {
        self.helper = Some(helper);
        self
    }
}

/// Runs programs in a fresh namespace each time.
pub trait Executor: Send + Sync {
    fn execute(&self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError>;

    /// A session whose namespace persists across calls (multi-turn baselines).
    fn open_session(&self) -> Result<Box<dyn ExecSession + '_>, ExecError>;
}

pub trait ExecSession {
    fn execute(&mut self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeMatcher {
    Exact(String),
    Substring(String),
}

impl CodeMatcher {
    fn matches(&self, code: &str) -> bool {
        match self {
            CodeMatcher::Exact(s) => code == s,
            CodeMatcher::Substring(s) => code.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: CodeMatcher,
    pub outcome: ExecutionOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptRecord {
    matcher_kind: String,
    matcher_value: String,
    outcome: ExecutionOutcome,
}

/// Ordered code → outcome table; first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptTable {
    pub entries: Vec<ScriptEntry>,
}

impl ScriptTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn substring(mut self, needle: impl Into<String>, outcome: ExecutionOutcome) -> Self {
        self.entries.push(ScriptEntry {
            matcher: CodeMatcher::Substring(needle.into()),
            outcome,
        });
        self
    }

    pub fn exact(mut self, code: impl Into<String>, outcome: ExecutionOutcome) -> Self {
        self.entries.push(ScriptEntry {
            matcher: CodeMatcher::Exact(code.into()),
            outcome,
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ExecError> {
        let records: Vec<ScriptRecord> =
            serde_json::from_str(text).map_err(|e| ExecError::Config(format!("script table: {e}")))?;
        let entries = records
            .into_iter()
            .map(|r| {
                let matcher = match r.matcher_kind.as_str() {
                    "exact" => CodeMatcher::Exact(r.matcher_value),
                    "substring" => CodeMatcher::Substring(r.matcher_value),
                    other => {
                        return Err(ExecError::Config(format!(
                            "script table: unknown matcher_kind `{other}`"
                        )))
                    }
                };
                Ok(ScriptEntry {
                    matcher,
                    outcome: r.outcome,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<ScriptRecord> = self
            .entries
            .iter()
            .map(|e| {
                let (kind, value) = match &e.matcher {
                    CodeMatcher::Exact(s) => ("exact", s.clone()),
                    CodeMatcher::Substring(s) => ("substring", s.clone()),
                };
                ScriptRecord {
                    matcher_kind: kind.into(),
                    matcher_value: value,
                    outcome: e.outcome.clone(),
                }
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("script table serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ExecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExecError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Outcome of the first entry matching `code`, verbatim; a miss is an
/// exception with stderr `script_miss`.
pub fn execute_scripted(code: &str, table: &ScriptTable, _limits: &ExecutorLimits) -> ExecutionOutcome {
    table
        .entries
        .iter()
        .find(|e| e.matcher.matches(code))
        .map(|e| e.outcome.clone())
        .unwrap_or_else(|| ExecutionOutcome::exception("script_miss"))
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedExecutor {
    table: ScriptTable,
}

impl ScriptedExecutor {
    pub fn new(table: ScriptTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
        Ok(execute_scripted(job.code, &self.table, &job.limits))
    }

    fn open_session(&self) -> Result<Box<dyn ExecSession + '_>, ExecError> {
        Ok(Box::new(ScriptedSession { table: &self.table }))
    }
}

struct ScriptedSession<'a> {
    table: &'a ScriptTable,
}

impl ExecSession for ScriptedSession<'_> {
    fn execute(&mut self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
        Ok(execute_scripted(job.code, self.table, &job.limits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_examples() {
        assert_eq!(classify_outcome(&ExecutionOutcome::ok("42")), NodeStatus::Success);
        assert_eq!(
            classify_outcome(&ExecutionOutcome::exception("NameError")),
            NodeStatus::Failure
        );
        assert_eq!(classify_outcome(&ExecutionOutcome::empty()), NodeStatus::Failure);
        assert_eq!(classify_outcome(&ExecutionOutcome::timeout(500)), NodeStatus::Failure);
        assert_eq!(
            classify_outcome(&ExecutionOutcome::parse_failure("no tags")),
            NodeStatus::Failure
        );
    }

    #[test]
    fn classify_is_total_with_one_success_status() {
        let statuses = [
            ExecStatus::Ok,
            ExecStatus::Exception,
            ExecStatus::Timeout,
            ExecStatus::Empty,
            ExecStatus::ParseFailure,
        ];
        let successes: Vec<_> = statuses
            .iter()
            .filter(|s| {
                let o = ExecutionOutcome {
                    status: **s,
                    value: "v".into(),
                    stdout: "v".into(),
                    stderr: String::new(),
                    duration_ms: 1,
                };
                classify_outcome(&o) == NodeStatus::Success
            })
            .collect();
        assert_eq!(successes, vec![&ExecStatus::Ok]);
        // a hand-built ok with a blank value is still a failure
        let blank = ExecutionOutcome {
            status: ExecStatus::Ok,
            value: " ".into(),
            stdout: String::new(),
            stderr: String::new(),
            duration_ms: 0,
        };
        assert_eq!(classify_outcome(&blank), NodeStatus::Failure);
    }

    #[test]
    fn scripted_lookup_rules() {
        let limits = ExecutorLimits::default();
        let table = ScriptTable::new()
            .substring("print(answer)", ExecutionOutcome::ok("42"))
            .substring("print", ExecutionOutcome::ok("other"));
        assert_eq!(
            execute_scripted("answer = 6*7\nprint(answer)", &table, &limits).value,
            "42"
        );
        // first match wins even though both match
        assert_eq!(execute_scripted("print(answer)", &table, &limits).value, "42");
        let miss = execute_scripted("x = 1", &table, &limits);
        assert_eq!(miss.status, ExecStatus::Exception);
        assert_eq!(miss.stderr, "script_miss");
    }

    #[test]
    fn exact_matcher_requires_equality() {
        let table = ScriptTable::new().exact("a", ExecutionOutcome::ok("1"));
        let limits = ExecutorLimits::default();
        assert_eq!(execute_scripted("a", &table, &limits).value, "1");
        assert_eq!(execute_scripted("ab", &table, &limits).stderr, "script_miss");
    }

    #[test]
    fn script_table_json_round_trip() {
        let table = ScriptTable::new()
            .substring("x", ExecutionOutcome::ok("1").with_duration(5))
            .exact("y", ExecutionOutcome::exception("boom"));
        assert_eq!(ScriptTable::from_json(&table.to_json()).unwrap(), table);
        assert!(ScriptTable::from_json(r#"[{"matcher_kind":"regex","matcher_value":"","outcome":{"status":"ok"}}]"#).is_err());
    }

    #[test]
    fn limits_must_be_positive() {
        assert!(ExecutorLimits::default().validate().is_ok());
        assert!(ExecutorLimits::with_timeout(0).validate().is_err());
    }
}
