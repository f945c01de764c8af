//! Runs a suite under one strategy and collects report rows.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use toc_core::baselines::{codeact_loop, react_loop, AgentEnv, BaselineRun, TerminatedBy, Termination, DEFAULT_MAX_STEPS};
use toc_core::execution::{Executor, ExecutorLimits};
use toc_core::gateway::{sample_model, Gateway};
use toc_core::model::{TaskSpec, TreeConfig, TreeRecord};
use toc_core::sampling::task_seed;
use toc_core::tree::{Engine, EngineError, Pools};

use crate::report::{BenchReport, ReportRow};
use crate::suite::SuiteFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Toc(TreeConfig),
    React { max_steps: u32 },
    CodeAct { max_steps: u32, termination: Termination },
}

impl Strategy {
    pub fn react() -> Self {
        Strategy::React {
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn codeact(termination: Termination) -> Self {
        Strategy::CodeAct {
            max_steps: DEFAULT_MAX_STEPS,
            termination,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Toc(config) => config.label(),
            Strategy::React { .. } => "react".into(),
            Strategy::CodeAct { .. } => "codeact".into(),
        }
    }
}

/// Everything a benchmark run shares across tasks.
#[derive(Clone, Copy)]
pub struct BenchEnv<'a> {
    pub pools: &'a Pools,
    pub executor: &'a dyn Executor,
    pub gateway: &'a Gateway,
    pub limits: ExecutorLimits,
    /// Tasks run at once.
    pub jobs: usize,
}

/// Outcome of one task, with the full trace kept for inspection.
#[derive(Debug, Clone)]
pub enum TaskTrace {
    Tree(Box<TreeRecord>),
    Baseline(BaselineRun),
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub row: ReportRow,
    pub trace: TaskTrace,
}

impl TaskResult {
    pub fn is_protocol_error(&self) -> bool {
        matches!(&self.trace, TaskTrace::Aborted(e) if e.starts_with("protocol"))
    }
}

pub fn run_task(task: &TaskSpec, strategy: &Strategy, env: &BenchEnv<'_>, run_seed: u64) -> TaskResult {
    let seed = task_seed(run_seed, &task.id);
    let label = strategy.label();
    let row = |correct, turns, output_words, duration_ms, error| ReportRow {
        task_id: task.id.clone(),
        strategy: label.clone(),
        correct,
        turns,
        output_words,
        duration_ms,
        error,
    };
    match strategy {
        Strategy::Toc(config) => {
            let mut engine = Engine::new(env.pools, env.executor, env.gateway);
            engine.limits = env.limits;
            match engine.grow_tree(task, config, seed) {
                Ok(tree) => {
                    let duration = tree.nodes.iter().map(|n| n.outcome.duration_ms).sum();
                    TaskResult {
                        row: row(tree.metrics.correct, tree.metrics.turns, tree.metrics.output_words, duration, None),
                        trace: TaskTrace::Tree(Box::new(tree)),
                    }
                }
                Err(e) => {
                    let note = match &e {
                        EngineError::Protocol(_) => e.to_string(),
                        other => format!("aborted: {other}"),
                    };
                    TaskResult {
                        row: row(false, 0, 0, 0, Some(note.clone())),
                        trace: TaskTrace::Aborted(note),
                    }
                }
            }
        }
        Strategy::React { max_steps } | Strategy::CodeAct { max_steps, .. } => {
            let model = match sample_model(env.pools.models.models(), seed, (1, 1)) {
                Ok(m) => m,
                Err(e) => {
                    let note = format!("aborted: {e}");
                    return TaskResult {
                        row: row(false, 0, 0, 0, Some(note.clone())),
                        trace: TaskTrace::Aborted(note),
                    };
                }
            };
            let agent = AgentEnv {
                model,
                gateway: env.gateway,
                executor: env.executor,
                limits: env.limits,
                max_steps: *max_steps,
            };
            let run = match strategy {
                Strategy::CodeAct { termination, .. } => codeact_loop(task, &agent, *termination),
                _ => react_loop(task, &agent),
            };
            let error = (run.terminated_by == TerminatedBy::Error).then(|| run.error.clone().unwrap_or_default());
            TaskResult {
                row: row(run.correct(task), run.turns, run.output_words, run.exec_duration_ms, error),
                trace: TaskTrace::Baseline(run),
            }
        }
    }
}

/// Runs every task of `suite`, up to `env.jobs` at a time. Results come back
/// in suite order whatever order tasks finish in.
pub fn run_tasks(suite: &SuiteFile, strategy: &Strategy, env: &BenchEnv<'_>, run_seed: u64) -> Vec<TaskResult> {
    let slots: Vec<Mutex<Option<TaskResult>>> = suite.tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = env.jobs.clamp(1, suite.tasks.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = suite.tasks.get(i) else { break };
                let result = run_task(task, strategy, env, run_seed);
                tracing::info!(task = %task.id, strategy = %result.row.strategy, correct = result.row.correct, "task done");
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every task ran"))
        .collect()
}

pub fn run_benchmark(suite: &SuiteFile, strategy: &Strategy, env: &BenchEnv<'_>, run_seed: u64) -> BenchReport {
    BenchReport::from_rows(run_tasks(suite, strategy, env, run_seed).into_iter().map(|r| r.row).collect())
}
