//! Fixture builders shared by the bench integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toc_bench::suite::SuiteFile;
use toc_core::execution::ScriptTable;
use toc_core::gateway::{CompletionRequest, Gateway, GatewayError, Matcher, RequestTag, Transcript};
use toc_core::model::{AnswerChecker, ExecutionOutcome, TaskSpec, ToolDescription};

pub fn fixtures_dir() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures"].iter().collect()
}

// ---------------------------------------------------------------------------
// 12-task comparison fixture

/// What one node's program does when executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    /// Prints the right answer.
    Right,
    /// Prints a wrong answer.
    Wrong,
    /// Raises.
    Fail,
}

use Node::{Fail as F, Right as R, Wrong as W};

/// Layer-by-layer node behaviour per task for a 3-3 tree, 9 nodes each.
/// Layers past the stopping layer are never reached.
pub const TOC_PLAN: [[Node; 9]; 12] = [
    [R, R, R, F, F, F, F, F, F],
    [R, R, R, F, F, F, F, F, F],
    [R, R, R, F, F, F, F, F, F],
    [R, R, R, F, F, F, F, F, F],
    [R, R, R, F, F, F, F, F, F],
    [R, R, R, F, F, F, F, F, F],
    [F, F, F, R, R, R, F, F, F],
    [F, F, F, R, R, R, F, F, F],
    [F, F, F, F, F, F, R, F, R],
    [R, R, F, R, R, R, F, F, F],
    [F, F, F, F, F, F, F, F, F],
    [W, W, R, F, F, F, F, F, F],
];

/// Expected (correct, turns) of the tree strategy per task, derived by hand
/// from `TOC_PLAN`: layer 1 all-success stops at 1; a failing layer grows.
pub const TOC_EXPECTED: [(bool, u32); 12] = [
    (true, 1),
    (true, 1),
    (true, 1),
    (true, 1),
    (true, 1),
    (true, 1),
    (true, 2),
    (true, 2),
    (true, 3),
    (true, 2),
    (false, 3),
    (false, 1),
];

/// CodeAct script per task: number of probing steps before the final
/// reply, and what that reply is (`None`: never answers).
pub const CODEACT_PLAN: [(u32, Option<bool>); 12] = [
    (2, Some(true)),
    (2, Some(true)),
    (2, Some(true)),
    (2, Some(true)),
    (4, Some(true)),
    (4, Some(true)),
    (10, None),
    (10, None),
    (3, Some(false)),
    (3, Some(false)),
    (1, Some(false)),
    (10, None),
];

/// Expected (correct, turns) for CodeAct with a 10-step limit.
pub const CODEACT_EXPECTED: [(bool, u32); 12] = [
    (true, 3),
    (true, 3),
    (true, 3),
    (true, 3),
    (true, 5),
    (true, 5),
    (false, 10),
    (false, 10),
    (false, 4),
    (false, 4),
    (false, 2),
    (false, 10),
];

pub fn e2e_answer(i: usize) -> String {
    (1000 + 37 * i).to_string()
}

fn e2e_wrong(i: usize) -> String {
    (6000 + 37 * i).to_string()
}

pub fn e2e_task_id(i: usize) -> String {
    format!("ledger-{i:02}")
}

pub struct E2eFixture {
    pub suite: SuiteFile,
    pub transcript: Transcript,
    pub table: ScriptTable,
}

pub fn e2e_fixture() -> E2eFixture {
    let tool = ToolDescription {
        name: "ledger_lookup".into(),
        description: "Returns the raw entries of a ledger.".into(),
        fn_signature: "ledger_lookup(ledger_id: int) -> list".into(),
        output_example: Some("[{'amount': 120, 'side': 'credit'}]".into()),
    };
    let mut tasks = Vec::new();
    let mut transcript = Transcript::new();
    let mut table = ScriptTable::new();
    for i in 1..=12 {
        let id = e2e_task_id(i);
        tasks.push(TaskSpec {
            id: id.clone(),
            query: format!("Compute the settlement code of ledger {i}."),
            tools: vec![tool.clone()],
            checker: AnswerChecker::keywords_all([e2e_answer(i)]),
            category: "ledger".into(),
        });
        let plan = TOC_PLAN[i - 1];
        for (n, node) in plan.iter().enumerate() {
            let n = n + 1;
            let code = format!("settle_{i:02}_{n}()");
            transcript.push(
                Matcher::parse_tag_ordinal(&format!("{id}:node_generation#{n}")).unwrap(),
                format!("<thought>Look up ledger {i} and net the entries, variant {n}.</thought>\n<execute>\n{code}\n</execute>"),
            );
            table = match node {
                R => table.exact(code, ExecutionOutcome::ok(e2e_answer(i))),
                W => table.exact(code, ExecutionOutcome::ok(e2e_wrong(i))),
                F => table.exact(code, ExecutionOutcome::exception("KeyError: 'side'")),
            };
        }
        // the summary echoes whatever won the vote
        let ok_values: Vec<&Node> = plan.iter().filter(|n| **n != F).collect();
        let wrong_wins = ok_values.iter().filter(|n| ***n == W).count() * 2 > ok_values.len();
        let winner = if wrong_wins { e2e_wrong(i) } else { e2e_answer(i) };
        transcript.push(
            Matcher::parse_tag_ordinal(&format!("{id}:summarize#1")).unwrap(),
            format!("The settlement code of ledger {i} is {winner}."),
        );

        let (probes, answer) = CODEACT_PLAN[i - 1];
        for k in 1..=probes {
            let code = format!("probe_{i:02}_{k}()");
            transcript.push(
                Matcher::parse_tag_ordinal(&format!("{id}:agent_step#{k}")).unwrap(),
                format!("<thought>Inspect part {k} of the ledger.</thought>\n<execute>\n{code}\n</execute>"),
            );
            table = table.exact(code, ExecutionOutcome::ok(format!("partial total {k}")));
        }
        if let Some(right) = answer {
            let value = if right { e2e_answer(i) } else { e2e_wrong(i) };
            transcript.push(
                Matcher::parse_tag_ordinal(&format!("{id}:agent_step#{}", probes + 1)).unwrap(),
                format!("<thought>I have the total.</thought>\n<solution>{value}</solution>"),
            );
        }
    }
    let mut tool_bindings = BTreeMap::new();
    tool_bindings.insert("ledger_lookup".to_string(), "ledger.lookup".to_string());
    E2eFixture {
        suite: SuiteFile {
            suite_id: "ledger-12".into(),
            tasks,
            tool_bindings,
            resources: BTreeMap::new(),
        },
        transcript,
        table,
    }
}

pub const E2E_FILES: [&str; 3] = ["suite.json", "transcript.json", "exec_table.json"];

pub fn e2e_texts(f: &E2eFixture) -> [String; 3] {
    [f.suite.to_json() + "\n", f.transcript.to_json() + "\n", f.table.to_json() + "\n"]
}

pub fn write_e2e(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, text) in E2E_FILES.iter().zip(e2e_texts(&e2e_fixture())) {
        std::fs::write(dir.join(name), text).unwrap();
    }
}

// ---------------------------------------------------------------------------
// coordinate-scripted trees

/// Node code naming its own coordinates.
pub fn coord_code(l: u32, m: u32) -> String {
    format!("node({l}, {m})")
}

/// A backend whose node replies are `coord_code` of the requesting slot, and
/// whose summaries repeat a fixed sentence.
pub fn coordinate_backend(width: u32) -> Gateway {
    Gateway::from_backend(move |r: &CompletionRequest| -> Result<String, GatewayError> {
        match r.tag {
            RequestTag::NodeGeneration => {
                let ord = r.ordinal.expect("node requests carry an ordinal");
                let (l, m) = ((ord - 1) / width + 1, (ord - 1) % width + 1);
                Ok(format!("<thought>slot {l}-{m}</thought>\n<execute>{}</execute>", coord_code(l, m)))
            }
            RequestTag::Summarize => Ok("summary".into()),
            other => Err(GatewayError::Backend(format!("unexpected {other} request"))),
        }
    })
}
