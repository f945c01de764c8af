//! Code trees: whole programs generated per node, executed, and grown into
//! a breadth-first tree of refinements driven by execution outcomes.

pub mod aggregator;
pub mod baselines;
pub mod codeprogram;
pub mod execution;
pub mod gateway;
pub mod helpers;
pub mod model;
pub mod prompt;
pub mod sampling;
pub mod tree;

pub use aggregator::{finalize, majority_vote, normalize_answer, FinalAnswer, VoteResult};
pub use execution::{Executor, ExecutorLimits, ScriptTable, ScriptedExecutor};
pub use gateway::{Gateway, ModelPool, ModelSpec, Transcript};
pub use model::{NodeId, NodeRecord, NodeStatus, TaskSpec, TreeConfig, TreeRecord};
pub use prompt::PromptPool;
pub use tree::{plan_next_layer, Engine, EngineError, Pools};
