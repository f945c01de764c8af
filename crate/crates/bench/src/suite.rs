//! Task suites on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toc_core::model::TaskSpec;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

/// A named set of tasks plus where each tool's implementation lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub suite_id: String,
    pub tasks: Vec<TaskSpec>,
    /// Tool name to implementation key in the worker registry.
    pub tool_bindings: BTreeMap<String, String>,
    /// Auxiliary documents tools may read, such as toy web pages.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub resources: BTreeMap<String, String>,
}

impl SuiteFile {
    pub fn validate(&self) -> Result<(), SuiteError> {
        if self.suite_id.trim().is_empty() {
            return Err(field("suite_id", "must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            task.validate()
                .map_err(|e| field(&format!("tasks[{i}]"), &e.to_string()))?;
            if !seen.insert(task.id.as_str()) {
                return Err(field(&format!("tasks[{i}].id"), &format!("duplicate task id `{}`", task.id)));
            }
            for (j, tool) in task.tools.iter().enumerate() {
                if !self.tool_bindings.contains_key(&tool.name) {
                    return Err(field(
                        &format!("tasks[{i}].tools[{j}].name"),
                        &format!("tool `{}` has no binding", tool.name),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes")
    }
}

fn field(name: &str, message: &str) -> SuiteError {
    SuiteError::Field {
        field: name.to_string(),
        message: message.to_string(),
    }
}

pub fn parse_suite(text: &str) -> Result<SuiteFile, SuiteError> {
    let suite: SuiteFile = serde_json::from_str(text).map_err(|e| SuiteError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    suite.validate()?;
    Ok(suite)
}

pub fn load_suite(path: &Path) -> Result<SuiteFile, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_suite(&text)
}
