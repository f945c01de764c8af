use std::collections::BTreeMap;
use std::sync::Mutex;

use proptest::prelude::*;
use toc_core::execution::{ExecError, ExecJob, ExecSession, Executor, ScriptTable, ScriptedExecutor};
use toc_core::gateway::{CompletionRequest, Gateway, GatewayError, ModelPool, ModelSpec, RequestTag};
use toc_core::model::{AnswerChecker, ExecutionOutcome, NodeId, TaskSpec, ToolDescription, TreeConfig};
use toc_core::prompt::{PromptPool, REFLECTION_INSTRUCTION};
use toc_core::tree::{Engine, Pools};
use toc_core::aggregator::UNRESOLVED_PREFIX;

fn task() -> TaskSpec {
    TaskSpec {
        id: "sum".into(),
        query: "What is 40 + 2?".into(),
        tools: vec![ToolDescription {
            name: "add".into(),
            description: "Adds two integers.".into(),
            fn_signature: "add(a: int, b: int) -> int".into(),
            output_example: Some("3".into()),
        }],
        checker: AnswerChecker::keywords_all(["42"]),
        category: "math".into(),
    }
}

fn pools() -> Pools {
    Pools::new(
        PromptPool::default_pool(),
        ModelPool::new(vec![ModelSpec::scripted("alpha"), ModelSpec::scripted("beta")]).unwrap(),
    )
}

/// Answers node generation with code naming its own coordinates, and
/// summaries with a fixed line.
fn coordinate_backend(width: u32) -> Gateway {
    Gateway::from_backend(move |r: &CompletionRequest| -> Result<String, GatewayError> {
        match r.tag {
            RequestTag::NodeGeneration => {
                let ord = r.ordinal.expect("node requests carry an ordinal");
                let (l, m) = ((ord - 1) / width + 1, (ord - 1) % width + 1);
                Ok(format!("<thought>try {l}-{m}</thought><execute>node({l}, {m})</execute>"))
            }
            RequestTag::Summarize => Ok("The answer is 42.".into()),
            _ => Err(GatewayError::Backend("unexpected".into())),
        }
    })
}

/// Executes `node(l, m)` by looking the coordinates up in a table; nodes
/// not listed fail.
struct TableExecutor {
    ok: BTreeMap<(u32, u32), String>,
    calls: Mutex<u32>,
}

impl TableExecutor {
    fn new(ok: &[((u32, u32), &str)]) -> Self {
        Self {
            ok: ok.iter().map(|(k, v)| (*k, v.to_string())).collect(),
            calls: Mutex::new(0),
        }
    }

    fn coords(code: &str) -> (u32, u32) {
        let inner = code.trim_start_matches("node(").trim_end_matches(')');
        let (l, m) = inner.split_once(", ").unwrap();
        (l.parse().unwrap(), m.parse().unwrap())
    }
}

impl Executor for TableExecutor {
    fn execute(&self, job: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
        *self.calls.lock().unwrap() += 1;
        Ok(match self.ok.get(&Self::coords(job.code)) {
            Some(v) => ExecutionOutcome::ok(v.clone()),
            None => ExecutionOutcome::exception("ValueError: nope"),
        })
    }

    fn open_session(&self) -> Result<Box<dyn ExecSession + '_>, ExecError> {
        Err(ExecError::Config("no sessions".into()))
    }
}

#[test]
fn first_layer_success_stops_after_one_turn() {
    let gw = coordinate_backend(3);
    let ex = TableExecutor::new(&[((1, 1), "42"), ((1, 2), "42"), ((1, 3), "42")]);
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw).grow_tree(&task(), &TreeConfig::default(), 7).unwrap();
    assert_eq!(tree.layers_used, 1);
    assert_eq!(tree.nodes.len(), 3);
    assert_eq!(tree.metrics.turns, 1);
    assert!(tree.metrics.correct);
    tree.check_invariants().unwrap();
    assert_eq!(gw.audit_count(RequestTag::NodeGeneration), 3);
    assert_eq!(gw.audit_count(RequestTag::Summarize), 1);
}

#[test]
fn failing_parent_spawns_children_with_its_history() {
    let gw = coordinate_backend(3);
    let ex = TableExecutor::new(&[((1, 1), "42"), ((2, 1), "42"), ((2, 2), "42"), ((2, 3), "41")]);
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw).grow_tree(&task(), &TreeConfig::default(), 7).unwrap();
    tree.check_invariants().unwrap();
    assert_eq!(tree.layers_used, 2);
    // failing parents 1-2 and 1-3 share layer 2 round-robin
    let parents: Vec<String> = tree.layer(2).map(|n| n.parent_id.unwrap().to_string()).collect();
    assert_eq!(parents, ["1-2", "1-3", "1-2"]);
    let child = tree.node(NodeId::new(2, 1)).unwrap();
    assert!(child.prompt.contains(REFLECTION_INSTRUCTION));
    assert!(child.prompt.contains("Code:\nnode(1, 2)"));
    assert!(child.prompt.contains("ValueError: nope"));
    assert!(!tree.node(NodeId::new(1, 1)).unwrap().prompt.contains(REFLECTION_INSTRUCTION));
    assert_eq!(tree.collected.len(), 4);
    assert_eq!(tree.vote.as_ref().unwrap().count(), 3);
    assert!(tree.metrics.correct);
}

#[test]
fn no_success_is_unresolved_and_incorrect() {
    let gw = coordinate_backend(2);
    let ex = TableExecutor::new(&[]);
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw)
        .grow_tree(&task(), &TreeConfig::with_shape(3, 2), 1)
        .unwrap();
    assert_eq!(tree.layers_used, 3);
    assert_eq!(tree.nodes.len(), 6);
    assert!(tree.final_answer.as_deref().unwrap().starts_with(UNRESOLVED_PREFIX));
    assert!(!tree.metrics.correct);
    assert_eq!(gw.audit_count(RequestTag::Summarize), 0);
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let ex = TableExecutor::new(&[((2, 3), "42"), ((3, 1), "41")]);
    let p = pools();
    let gw1 = coordinate_backend(3);
    let gw2 = coordinate_backend(3);
    let a = Engine::new(&p, &ex, &gw1).grow_tree(&task(), &TreeConfig::default(), 99).unwrap();
    let b = Engine::new(&p, &ex, &gw2)
        .sequential()
        .grow_tree(&task(), &TreeConfig::default(), 99)
        .unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn trace_round_trips_through_json() {
    let gw = coordinate_backend(3);
    let ex = TableExecutor::new(&[((2, 1), "42")]);
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw).grow_tree(&task(), &TreeConfig::default(), 3).unwrap();
    let json = serde_json::to_string_pretty(&tree).unwrap();
    let back: toc_core::model::TreeRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, tree);
}

#[test]
fn parse_failures_are_failing_nodes_not_executed() {
    let gw = Gateway::from_backend(|r: &CompletionRequest| -> Result<String, GatewayError> {
        match r.tag {
            RequestTag::NodeGeneration => Ok("I forgot the tags".into()),
            _ => Ok("x".into()),
        }
    });
    let ex = TableExecutor::new(&[]);
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw)
        .grow_tree(&task(), &TreeConfig::with_shape(2, 2), 0)
        .unwrap();
    assert_eq!(*ex.calls.lock().unwrap(), 0);
    assert_eq!(tree.nodes.len(), 4);
    assert!(tree.nodes.iter().all(|n| n.outcome.status == toc_core::model::ExecStatus::ParseFailure));
}

#[test]
fn protocol_errors_abort_the_run() {
    struct Broken;
    impl Executor for Broken {
        fn execute(&self, _: &ExecJob<'_>) -> Result<ExecutionOutcome, ExecError> {
            Err(ExecError::Protocol("wrong id".into()))
        }
        fn open_session(&self) -> Result<Box<dyn ExecSession + '_>, ExecError> {
            unreachable!()
        }
    }
    let gw = coordinate_backend(3);
    let p = pools();
    let err = Engine::new(&p, &Broken, &gw)
        .grow_tree(&task(), &TreeConfig::default(), 0)
        .unwrap_err();
    assert!(err.to_string().contains("wrong id"));
}

#[test]
fn output_words_match_the_audit_of_this_run() {
    let gw = coordinate_backend(3);
    let ex = TableExecutor::new(&[((1, 2), "42")]);
    let p = pools();
    let engine = Engine::new(&p, &ex, &gw);
    let first = engine.grow_tree(&task(), &TreeConfig::default(), 5).unwrap();
    let second = engine.grow_tree(&task(), &TreeConfig::default(), 5).unwrap();
    assert_eq!(first.metrics.output_words, second.metrics.output_words);
    assert_eq!(gw.audit_words(), first.metrics.output_words * 2);
    // 1-1 and 1-3 fail, so layers 2 and 3 fill up with failures:
    // nine 3-word node replies plus the 4-word summary
    assert_eq!(first.layers_used, 3);
    assert_eq!(first.metrics.output_words, 9 * 3 + 4);
}

#[test]
fn scripted_executor_table_drives_a_tree() {
    let gw = coordinate_backend(3);
    let ex = ScriptedExecutor::new(ScriptTable::new().exact("node(1, 3)", ExecutionOutcome::ok("42\n")));
    let p = pools();
    let tree = Engine::new(&p, &ex, &gw).grow_tree(&task(), &TreeConfig::default(), 5).unwrap();
    // the failing root siblings keep the tree growing to the depth limit
    assert_eq!(tree.layers_used, 3);
    assert_eq!(tree.collected, vec![NodeId::new(1, 3)]);
    tree.check_invariants().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_outcome_tables_respect_tree_invariants(
        depth in 1u32..=4,
        width in 1u32..=4,
        bits in proptest::collection::vec(any::<bool>(), 16),
        seed in any::<u64>(),
    ) {
        let ok: Vec<((u32, u32), &str)> = (0..16u32)
            .filter(|i| bits[*i as usize])
            .map(|i| ((i / 4 + 1, i % 4 + 1), "42"))
            .collect();
        let gw = coordinate_backend(width);
        let ex = TableExecutor::new(&ok);
        let p = pools();
        let tree = Engine::new(&p, &ex, &gw)
            .grow_tree(&task(), &TreeConfig::with_shape(depth, width), seed)
            .unwrap();
        prop_assert!(tree.check_invariants().is_ok(), "{:?}", tree.check_invariants());
        prop_assert_eq!(gw.audit_count(RequestTag::NodeGeneration), tree.nodes.len());
        prop_assert!(gw.audit_count(RequestTag::Summarize) <= 1);
        prop_assert_eq!(tree.metrics.correct, !tree.collected.is_empty());
    }
}
