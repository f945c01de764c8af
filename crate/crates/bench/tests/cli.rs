mod support;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;
use toc_bench::report::BenchReport;
use toc_bench::suite::{load_suite, SuiteFile};
use toc_core::execution::ScriptTable;
use toc_core::gateway::{Matcher, Transcript};
use toc_core::model::{AnswerChecker, ExecutionOutcome, TaskSpec, ToolDescription, TreeRecord};

fn toc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toc")).args(args).output().expect("spawn toc")
}

fn mini_worker(mode: &str) -> String {
    let script: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", "mini_worker.py"]
        .iter()
        .collect();
    format!("sandbox:python3 {} {mode}", script.display())
}

fn arithmetic_suite(ids: &[&str]) -> SuiteFile {
    let add = ToolDescription {
        name: "add".into(),
        description: "Adds two integers.".into(),
        fn_signature: "add(a: int, b: int) -> int".into(),
        output_example: Some("add(1, 2) -> 3".into()),
    };
    SuiteFile {
        suite_id: "arith".into(),
        tasks: ids
            .iter()
            .map(|id| TaskSpec {
                id: id.to_string(),
                query: "What is 40 + 2?".into(),
                tools: vec![add.clone()],
                checker: AnswerChecker::keywords_all(["42"]),
                category: "math".into(),
            })
            .collect(),
        tool_bindings: BTreeMap::from([("add".to_string(), "math.add".to_string())]),
        resources: BTreeMap::new(),
    }
}

/// Node replies that call the `add` tool, plus a fixed summary.
fn arithmetic_transcript(ids: &[&str], width: u32) -> Transcript {
    let mut t = Transcript::new();
    for id in ids {
        for n in 1..=width {
            t.push(
                Matcher::parse_tag_ordinal(&format!("{id}:node_generation#{n}")).unwrap(),
                "<thought>Use the add tool.</thought>\n<execute>\nprint(add(40, 2))\n</execute>",
            );
        }
        t.push(Matcher::parse_tag_ordinal(&format!("{id}:summarize#1")).unwrap(), "The sum is 42.");
    }
    t
}

struct Files {
    _dir: TempDir,
    suite: String,
    backend: String,
    root: PathBuf,
}

fn write_files(suite: &SuiteFile, transcript: &Transcript) -> Files {
    let dir = TempDir::new().unwrap();
    let suite_path = dir.path().join("suite.json");
    std::fs::write(&suite_path, suite.to_json()).unwrap();
    let transcript_path = dir.path().join("transcript.json");
    std::fs::write(&transcript_path, transcript.to_json()).unwrap();
    Files {
        root: dir.path().to_path_buf(),
        suite: suite_path.display().to_string(),
        backend: format!("scripted:{}", transcript_path.display()),
        _dir: dir,
    }
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

#[test]
fn missing_suite_is_a_config_error() {
    let out = toc(&["bench", "--suite", "/nonexistent/suite.json", "--backend", "scripted:/nonexistent/t.json"]);
    assert_eq!(code(&out), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_backend_and_shape_are_config_errors() {
    let ids = ["a"];
    let f = write_files(&arithmetic_suite(&ids), &arithmetic_transcript(&ids, 3));
    let out = toc(&["bench", "--suite", &f.suite, "--backend", "carrier-pigeon:x"]);
    assert_eq!(code(&out), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("carrier-pigeon"));
    let out = toc(&["bench", "--suite", &f.suite, "--backend", &f.backend, "--depth", "0"]);
    assert_eq!(code(&out), Some(2));
    let out = toc(&["bench", "--suite", &f.suite, "--backend", &f.backend, "--executor", "teleport:x"]);
    assert_eq!(code(&out), Some(2));
}

#[test]
fn invalid_suite_is_a_config_error() {
    let mut suite = arithmetic_suite(&["a", "b"]);
    suite.tasks[1].id = "a".into();
    let f = write_files(&suite, &Transcript::new());
    let out = toc(&["bench", "--suite", &f.suite, "--backend", &f.backend]);
    assert_eq!(code(&out), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tasks[1].id"));
}

#[test]
fn real_sandbox_run_solves_the_task() {
    let ids = ["sum"];
    let f = write_files(&arithmetic_suite(&ids), &arithmetic_transcript(&ids, 3));
    let trace = f.root.join("trace.json");
    let out = toc(&[
        "run",
        "--suite",
        &f.suite,
        "--task",
        "sum",
        "--backend",
        &f.backend,
        "--executor",
        &mini_worker("normal"),
        "--trace",
        &trace.display().to_string(),
    ]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let tree: TreeRecord = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(tree.layers_used, 1);
    assert_eq!(tree.nodes.len(), 3);
    assert!(tree.nodes.iter().all(|n| n.outcome.value == "42"), "{:?}", tree.nodes);
    assert!(tree.metrics.correct);
    assert_eq!(tree.final_answer.as_deref(), Some("The sum is 42."));
}

#[test]
fn worker_protocol_fault_exits_3_after_writing_the_report() {
    let ids = ["sum"];
    let f = write_files(&arithmetic_suite(&ids), &arithmetic_transcript(&ids, 3));
    let report = f.root.join("report.json");
    let out = toc(&[
        "bench",
        "--suite",
        &f.suite,
        "--backend",
        &f.backend,
        "--executor",
        &mini_worker("wrong-id"),
        "--report",
        &report.display().to_string(),
        "--format",
        "structured",
    ]);
    assert_eq!(code(&out), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = BenchReport::load(&report).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(!report.rows[0].correct);
    assert!(report.rows[0].error.as_deref().unwrap().starts_with("protocol"));
}

#[test]
fn ablation_reports_every_shape() {
    let ids = ["a", "b"];
    let mut t = Transcript::new();
    // replies reused across every shape in the grid
    for n in 1..=4 {
        t.push_reusable(
            Matcher::parse_tag_ordinal(&format!("node_generation#{n}")).unwrap(),
            "<thought>t</thought><execute>answer()</execute>",
            100,
        );
    }
    t.push_reusable(Matcher::Substring(String::new()), "It is 42.", 100);
    let f = write_files(&arithmetic_suite(&ids), &t);
    let table = f.root.join("table.json");
    std::fs::write(&table, ScriptTable::new().exact("answer()", ExecutionOutcome::ok("42")).to_json()).unwrap();
    let out = toc(&[
        "ablate",
        "--suite",
        &f.suite,
        "--backend",
        &f.backend,
        "--executor",
        &format!("scripted:{}", table.display()),
        "--depths",
        "1,2",
        "--widths",
        "1,2",
    ]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("| Strategy"));
    for label in ["toc(1-1)", "toc(1-2)", "toc(2-1)", "toc(2-2)"] {
        let line = text.lines().find(|l| l.contains(label)).unwrap_or_else(|| panic!("{label} missing:\n{text}"));
        assert!(line.contains("100.0%"), "{line}");
    }
}

#[test]
fn gen_suites_writes_loadable_suites() {
    let dir = TempDir::new().unwrap();
    let out = toc(&["gen-suites", "--out", &dir.path().display().to_string(), "--tasks", "5", "--seed", "3"]);
    assert_eq!(code(&out), Some(0));
    for name in ["decoder", "trade", "web", "api_bank"] {
        let suite = load_suite(&dir.path().join(format!("{name}.json"))).unwrap();
        assert_eq!(suite.tasks.len(), 5);
    }
}

#[test]
fn committed_e2e_fixture_runs_from_the_cli() {
    let dir = support::fixtures_dir().join("e2e");
    let path = |n: &str| dir.join(n).display().to_string();
    let run = |strategy: &str| {
        let out = toc(&[
            "bench",
            "--suite",
            &path("suite.json"),
            "--backend",
            &format!("scripted:{}", path("transcript.json")),
            "--executor",
            &format!("scripted:{}", path("exec_table.json")),
            "--strategy",
            strategy,
            "--format",
            "structured",
        ]);
        assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<BenchReport>(&out.stdout).unwrap()
    };
    let toc_report = run("toc");
    let codeact = run("codeact");
    let correct = |r: &BenchReport| r.rows.iter().filter(|row| row.correct).count();
    assert_eq!((correct(&toc_report), correct(&codeact)), (10, 6));
    assert!(toc_report.aggregates[0].avg_turns < codeact.aggregates[0].avg_turns);
}
