//! Breadth-first growth of the code tree.
//!
//! Layer 1 holds `M` root nodes. After each layer, nodes whose execution
//! succeeded are collected and stop growing; if any node failed, the next
//! layer gets `M` slots distributed round-robin over the failing nodes. Growth
//! stops when a layer has no failures or after `L` layers. Growth decisions
//! see only the success/failure bit, never the printed value.

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::finalize;
use crate::codeprogram::{generate_node, NodeContext};
use crate::execution::{classify_outcome, ExecError, ExecJob, Executor, ExecutorLimits, HelperRoute};
use crate::gateway::{sample_model, Gateway, GatewayError, ModelPool};
use crate::model::{check_answer, ExecutionOutcome, ModelError, NodeId, NodeRecord, NodeStatus, RunMetrics, TaskSpec, TreeConfig, TreeRecord};
use crate::prompt::{sample_prompt, PromptError, PromptPool};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("executor: {0}")]
    Executor(String),
}

/// The two exploration pools sampled per node.
#[derive(Debug, Clone)]
pub struct Pools {
    pub prompts: PromptPool,
    pub models: ModelPool,
}

impl Pools {
    pub fn new(prompts: PromptPool, models: ModelPool) -> Self {
        Self { prompts, models }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub index: u32,
    pub parent: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: u32,
    pub assignments: Vec<Assignment>,
}

/// Plans layer `layer` from the statuses of the previous one. Layer 1 is
/// always `width` root slots. Otherwise `None` (stop) when nothing failed,
/// else `width` slots assigned round-robin over the failing nodes in id order.
pub fn plan_next_layer(prev_layer: &[(NodeId, NodeStatus)], width: u32, layer: u32) -> Option<LayerPlan> {
    if layer <= 1 {
        return Some(LayerPlan {
            layer: 1,
            assignments: (1..=width).map(|index| Assignment { index, parent: None }).collect(),
        });
    }
    let mut failing: Vec<NodeId> = prev_layer
        .iter()
        .filter(|(_, s)| *s == NodeStatus::Failure)
        .map(|(id, _)| *id)
        .collect();
    if failing.is_empty() {
        return None;
    }
    failing.sort();
    Some(LayerPlan {
        layer,
        assignments: (1..=width)
            .map(|index| Assignment {
                index,
                parent: Some(failing[(index as usize - 1) % failing.len()]),
            })
            .collect(),
    })
}

/// Shared handles a tree run needs.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub pools: &'a Pools,
    pub executor: &'a dyn Executor,
    pub gateway: &'a Gateway,
    pub limits: ExecutorLimits,
    /// Run the nodes of a layer on separate threads.
    pub parallel: bool,
}

impl<'a> Engine<'a> {
    pub fn new(pools: &'a Pools, executor: &'a dyn Executor, gateway: &'a Gateway) -> Self {
        Self {
            pools,
            executor,
            gateway,
            limits: ExecutorLimits::default(),
            parallel: true,
        }
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    fn build_node(
        &self,
        assignment: Assignment,
        layer: u32,
        task: &TaskSpec,
        tree: &TreeRecord,
        seed: u64,
    ) -> Result<NodeRecord, EngineError> {
        let config = &tree.config;
        let coords = (layer, assignment.index);
        let template = sample_prompt(&self.pools.prompts, seed, coords);
        let model = sample_model(self.pools.models.models(), seed, coords)?;
        let mut ancestors: Vec<&NodeRecord> = Vec::new();
        if let Some(pid) = assignment.parent {
            ancestors = tree.ancestors(pid);
            ancestors.push(tree.node(pid).ok_or_else(|| {
                EngineError::Model(ModelError::InvalidNodeId(pid.to_string()))
            })?);
        }
        let ctx = NodeContext {
            template,
            model,
            temperature: config.temperature,
            history_char_cap: config.history_char_cap,
            history_budget: config.history_budget,
            ordinal: Some((layer - 1) * config.max_width + assignment.index),
        };
        let (prompt, draft) = generate_node(task, &ancestors, &ctx, self.gateway)?;
        let outcome = match draft.failure_note() {
            Some(note) => ExecutionOutcome::parse_failure(note),
            None => {
                let limits = ExecutorLimits {
                    timeout_ms: config.timeout_ms,
                    ..self.limits
                };
                let job = ExecJob::new(&draft.code, &task.tools, limits).with_helper(HelperRoute {
                    gateway: self.gateway,
                    model,
                    scope: &task.id,
                });
                match self.executor.execute(&job) {
                    Ok(outcome) => outcome,
                    Err(ExecError::Protocol(e)) => return Err(EngineError::Protocol(e)),
                    Err(ExecError::Config(e)) => return Err(EngineError::Executor(e)),
                    Err(ExecError::Spawn(e)) => ExecutionOutcome::exception(format!("executor_unavailable: {e}")),
                }
            }
        };
        Ok(NodeRecord {
            id: NodeId::new(layer, assignment.index),
            parent_id: assignment.parent,
            thought: draft.thought,
            code: draft.code,
            status: classify_outcome(&outcome),
            outcome,
            prompt_id: template.id.clone(),
            model_id: model.id.clone(),
            prompt,
            raw_output: draft.raw_output,
        })
    }

    /// Generates, executes and classifies every node of `plan`. Nodes come
    /// back in index order whatever order they finish in.
    pub fn run_layer(
        &self,
        plan: &LayerPlan,
        task: &TaskSpec,
        tree: &TreeRecord,
        seed: u64,
    ) -> Result<Vec<NodeRecord>, EngineError> {
        let results: Vec<Result<NodeRecord, EngineError>> = if self.parallel && plan.assignments.len() > 1 {
            thread::scope(|scope| {
                let handles: Vec<_> = plan
                    .assignments
                    .iter()
                    .map(|a| scope.spawn(move || self.build_node(*a, plan.layer, task, tree, seed)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("node worker thread panicked"))
                    .collect()
            })
        } else {
            plan.assignments
                .iter()
                .map(|a| self.build_node(*a, plan.layer, task, tree, seed))
                .collect()
        };
        let mut nodes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        nodes.sort_by_key(|n| n.id);
        Ok(nodes)
    }

    /// Grows the full tree for `task` and produces its final answer.
    ///
    /// All completions go through a fork of the engine's gateway, so
    /// `metrics.output_words` covers exactly this run.
    pub fn grow_tree(&self, task: &TaskSpec, config: &TreeConfig, seed: u64) -> Result<TreeRecord, EngineError> {
        config.validate()?;
        task.validate()?;
        let gateway = self.gateway.fork();
        let engine = Engine {
            gateway: &gateway,
            ..*self
        };
        let mut tree = TreeRecord {
            task_id: task.id.clone(),
            config: config.clone(),
            seed,
            nodes: Vec::new(),
            layers_used: 0,
            collected: Vec::new(),
            vote: None,
            final_answer: None,
            metrics: RunMetrics::default(),
        };
        let mut plan = plan_next_layer(&[], config.max_width, 1);
        while let Some(current) = plan.take() {
            let layer = current.layer;
            let nodes = engine.run_layer(&current, task, &tree, seed)?;
            tracing::debug!(
                task = %task.id,
                layer,
                successes = nodes.iter().filter(|n| n.is_success()).count(),
                "layer done"
            );
            let statuses: Vec<(NodeId, NodeStatus)> = nodes.iter().map(|n| (n.id, n.status)).collect();
            tree.nodes.extend(nodes);
            tree.layers_used = layer;
            if layer < config.max_depth {
                plan = plan_next_layer(&statuses, config.max_width, layer + 1);
            }
        }
        tree.collected = tree.nodes.iter().filter(|n| n.is_success()).map(|n| n.id).collect();

        let answer = finalize(&tree, task, self.pools.models.models(), &gateway, config);
        tree.metrics = RunMetrics {
            correct: answer.resolved && check_answer(&answer.text, &task.checker),
            turns: tree.layers_used,
            output_words: gateway.audit_words(),
        };
        tree.vote = answer.vote;
        tree.final_answer = Some(answer.text);
        Ok(tree)
    }
}
