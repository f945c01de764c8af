//! Final answer: normalize the collected successes, take the most frequent
//! answer, and ask for one user-facing summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, ModelSpec, RequestTag};
use crate::model::{NodeId, NodeRecord, TaskSpec, TreeConfig, TreeRecord};

pub const UNRESOLVED_PREFIX: &str = "UNRESOLVED:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("no successful nodes to vote over")]
    NoSuccesses,
}

/// Canonical form used to group answers: trimmed, internal whitespace
/// collapsed, lower-cased; numbers lose thousands separators and trailing
/// fractional zeros (`"1,234.50"` → `"1234.5"`, `"42.0"` → `"42"`).
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    canonical_number(&collapsed).unwrap_or(collapsed)
}

fn canonical_number(s: &str) -> Option<String> {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() {
        return None;
    }
    let digits = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let head_ok = (1..=3).contains(&groups[0].len());
        let rest_ok = groups[1..].iter().all(|g| g.len() == 3);
        if !head_ok || !rest_ok {
            return None;
        }
        groups.concat()
    } else {
        int_part.to_string()
    };
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let frac = match frac_part {
        Some(f) if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) => return None,
        Some(f) => f.trim_end_matches('0'),
        None => "",
    };
    let int_trimmed = digits.trim_start_matches('0');
    let int_canon = if int_trimmed.is_empty() { "0" } else { int_trimmed };
    let sign = if int_canon == "0" && frac.is_empty() { "" } else { sign };
    Some(if frac.is_empty() {
        format!("{sign}{int_canon}")
    } else {
        format!("{sign}{int_canon}.{frac}")
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    /// Canonical (normalized) winning answer.
    pub winner: String,
    /// The winning answer as the lowest-id supporter printed it.
    pub winner_value: String,
    pub supporters: Vec<NodeId>,
    pub tally: BTreeMap<String, usize>,
}

impl VoteResult {
    pub fn count(&self) -> usize {
        self.supporters.len()
    }
}

/// Groups successes by normalized value and picks the largest group; ties go
/// to the group holding the smallest node id.
pub fn majority_vote(successes: &[&NodeRecord]) -> Result<VoteResult, AggregateError> {
    if successes.is_empty() {
        return Err(AggregateError::NoSuccesses);
    }
    let mut groups: BTreeMap<String, Vec<&NodeRecord>> = BTreeMap::new();
    for node in successes {
        groups
            .entry(normalize_answer(&node.outcome.value))
            .or_default()
            .push(node);
    }
    for members in groups.values_mut() {
        members.sort_by_key(|n| n.id);
    }
    let (winner, members) = groups
        .iter()
        .max_by(|(_, a), (_, b)| {
            a.len()
                .cmp(&b.len())
                // reversed: the smaller first id wins a tie
                .then_with(|| b[0].id.cmp(&a[0].id))
        })
        .expect("non-empty groups");
    Ok(VoteResult {
        winner: winner.clone(),
        winner_value: members[0].outcome.value.trim().to_string(),
        supporters: members.iter().map(|n| n.id).collect(),
        tally: groups.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalAnswer {
    pub text: String,
    pub vote: Option<VoteResult>,
    /// False when no node succeeded; such runs are always graded incorrect.
    pub resolved: bool,
    /// True when the summarization call succeeded.
    pub summarized: bool,
}

pub fn summarize_prompt(query: &str, vote: &VoteResult, supporters: &[&NodeRecord], total: usize) -> String {
    let outputs = supporters
        .iter()
        .map(|n| format!("[{}] {}", n.id, n.outcome.value.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "Several independently written programs solved the user's query and executed successfully. \
The most frequent answer among them was selected by majority vote.\n\n\
User's Query:\n{query}\n\n\
Majority answer ({} of {total} successful programs):\n{}\n\n\
Supporting outputs:\n{outputs}\n\n\
Write the final response to the user's query based on the majority answer. State the answer directly.",
        vote.count(),
        vote.winner_value,
    )
}

/// Best-effort text from the last layer when nothing succeeded.
fn best_effort(tree: &TreeRecord) -> String {
    tree.layer(tree.layers_used)
        .find_map(|n| {
            [&n.outcome.value, &n.outcome.stdout, &n.outcome.stderr]
                .into_iter()
                .map(|s| s.trim())
                .find(|s| !s.is_empty())
                .map(str::to_string)
        })
        .unwrap_or_default()
}

/// Picks the summarization model: the configured aggregator model if set,
/// otherwise the model of the winning group's first supporter.
fn summary_model(tree: &TreeRecord, vote: &VoteResult, models: &[ModelSpec], config: &TreeConfig) -> ModelSpec {
    let id = config.aggregator_model.clone().unwrap_or_else(|| {
        tree.node(vote.supporters[0])
            .map(|n| n.model_id.clone())
            .unwrap_or_default()
    });
    models
        .iter()
        .find(|m| m.id == id)
        .cloned()
        .unwrap_or_else(|| ModelSpec::scripted(id))
}

/// Produces the final answer for a grown tree with at most one gateway call.
pub fn finalize(
    tree: &TreeRecord,
    task: &TaskSpec,
    models: &[ModelSpec],
    gateway: &Gateway,
    config: &TreeConfig,
) -> FinalAnswer {
    let successes = tree.successes();
    let vote = match majority_vote(&successes) {
        Ok(v) => v,
        Err(AggregateError::NoSuccesses) => {
            return FinalAnswer {
                text: format!("{UNRESOLVED_PREFIX} {}", best_effort(tree)).trim_end().to_string(),
                vote: None,
                resolved: false,
                summarized: false,
            }
        }
    };
    let supporters: Vec<&NodeRecord> = vote
        .supporters
        .iter()
        .filter_map(|id| tree.node(*id))
        .collect();
    let model = summary_model(tree, &vote, models, config);
    let request = CompletionRequest::new(
        &model,
        summarize_prompt(&task.query, &vote, &supporters, successes.len()),
        RequestTag::Summarize,
    )
    .temperature(config.temperature)
    .scope(task.id.clone());
    match gateway.complete(&request) {
        Ok(text) if !text.trim().is_empty() => FinalAnswer {
            text: text.trim().to_string(),
            vote: Some(vote),
            resolved: true,
            summarized: true,
        },
        Ok(_) | Err(_) => FinalAnswer {
            text: vote.winner_value.clone(),
            vote: Some(vote),
            resolved: true,
            summarized: false,
        },
    }
}
