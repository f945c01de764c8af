//! Multi-turn comparison loops: ReAct with JSON tool actions and CodeAct
//! with code actions in a namespace that persists across steps.
//!
//! Both count turns as model calls and words with the same audit and answer
//! checks as tree runs, so reports line up.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codeprogram::{parse_tagged, EXECUTE_CLOSE, EXECUTE_OPEN};
use crate::execution::{ExecError, ExecJob, ExecSession, Executor, ExecutorLimits, HelperRoute};
use crate::gateway::{CompletionRequest, Gateway, ModelSpec, RequestTag};
use crate::model::{check_answer, ExecStatus, ExecutionOutcome, TaskSpec};
use crate::prompt::{observation_text, render_root_prompt, truncate_field, PromptError, PromptTemplate};

pub const DEFAULT_MAX_STEPS: u32 = 10;

const REACT_TEMPLATE: &str = include_str!("../assets/baselines/react.md");
const CODEACT_TEMPLATE: &str = include_str!("../assets/baselines/codeact.md");

const OBSERVATION_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Answer,
    GtMatch,
    StepLimit,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Stop when the model gives an explicit `<solution>`.
    AnswerTag,
    /// Stop as soon as a step's output passes the task's answer checker.
    GtMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub turns: u32,
    pub output_words: u64,
    pub terminated_by: TerminatedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Sum of the reported execution durations of all steps.
    #[serde(default)]
    pub exec_duration_ms: u64,
}

impl BaselineRun {
    pub fn correct(&self, task: &TaskSpec) -> bool {
        self.final_answer
            .as_deref()
            .is_some_and(|a| check_answer(a, &task.checker))
    }
}

/// Shared handles for a baseline run.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub model: &'a ModelSpec,
    pub gateway: &'a Gateway,
    pub executor: &'a dyn Executor,
    pub limits: ExecutorLimits,
    pub max_steps: u32,
}

fn template(text: &str) -> PromptTemplate {
    PromptTemplate::parse_file(text).expect("bundled baseline prompt is valid")
}

fn render_steps(steps: &[Step]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(j, s)| {
            format!(
                "--- step {} ---\nAction:\n{}\nObservation:\n{}",
                j + 1,
                s.action,
                truncate_field(&s.observation, OBSERVATION_CAP)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn agent_call(env: &AgentEnv<'_>, gateway: &Gateway, task: &TaskSpec, prompt: String, step: u32) -> Result<String, String> {
    let request = CompletionRequest::new(env.model, prompt, RequestTag::AgentStep)
        .temperature(env.model.temperature)
        .scope(task.id.clone())
        .ordinal(step);
    gateway.complete(&request).map_err(|e| e.to_string())
}

fn tagged_span<'s>(text: &'s str, open: &str, close: &str) -> Option<&'s str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(text[start..end].trim())
}

fn finish(
    steps: Vec<Step>,
    exec_ms: u64,
    final_answer: Option<String>,
    turns: u32,
    gateway: &Gateway,
    terminated_by: TerminatedBy,
    error: Option<String>,
) -> BaselineRun {
    BaselineRun {
        steps,
        final_answer,
        turns,
        output_words: gateway.audit_words(),
        terminated_by,
        error,
        exec_duration_ms: exec_ms,
    }
}

/// A parsed ReAct action.
#[derive(Debug, Clone, PartialEq)]
pub enum ReactAction {
    Call { tool: String, arguments: serde_json::Map<String, Value> },
    Answer(String),
}

pub fn parse_react_action(reply: &str) -> Result<ReactAction, String> {
    let body = tagged_span(reply, "<action>", "</action>").ok_or("no <action> block")?;
    let value: Value = serde_json::from_str(body).map_err(|e| format!("action is not JSON: {e}"))?;
    let obj = value.as_object().ok_or("action must be a JSON object")?;
    if let Some(answer) = obj.get("final_answer") {
        return Ok(ReactAction::Answer(match answer {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
    }
    let tool = obj
        .get("tool")
        .and_then(Value::as_str)
        .ok_or("action needs \"tool\" or \"final_answer\"")?;
    let arguments = match obj.get("arguments") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err("\"arguments\" must be an object".into()),
    };
    Ok(ReactAction::Call {
        tool: tool.to_string(),
        arguments,
    })
}

/// Python code that calls `tool` with the JSON arguments as keywords.
pub fn tool_call_code(tool: &str, arguments: &serde_json::Map<String, Value>) -> String {
    let payload = Value::Object(arguments.clone()).to_string();
    let literal = serde_json::to_string(&payload).expect("string serializes");
    format!("import json\n_args = json.loads({literal})\nprint({tool}(**_args))")
}

/// Runs a ReAct loop: one JSON action per model call, tools executed in a
/// fresh namespace, until a final answer or the step limit.
pub fn react_loop(task: &TaskSpec, env: &AgentEnv<'_>) -> BaselineRun {
    let gateway = env.gateway.fork();
    let tpl = template(REACT_TEMPLATE);
    let mut steps = Vec::new();
    let mut exec_ms = 0u64;
    for turn in 1..=env.max_steps {
        let prompt = match render_root_prompt(&tpl, task, &render_steps(&steps)) {
            Ok(p) => p,
            Err(e) => return finish(steps, exec_ms, None, turn - 1, &gateway, TerminatedBy::Error, Some(e.to_string())),
        };
        let reply = match agent_call(env, &gateway, task, prompt, turn) {
            Ok(r) => r,
            Err(e) => return finish(steps, exec_ms, None, turn, &gateway, TerminatedBy::Error, Some(e)),
        };
        let action_text = tagged_span(&reply, "<action>", "</action>").unwrap_or(reply.trim()).to_string();
        let observation = match parse_react_action(&reply) {
            Ok(ReactAction::Answer(answer)) => {
                steps.push(Step {
                    action: action_text,
                    observation: String::new(),
                });
                return finish(steps, exec_ms, Some(answer), turn, &gateway, TerminatedBy::Answer, None);
            }
            Ok(ReactAction::Call { tool, arguments }) => {
                if !task.tools.iter().any(|t| t.name == tool) {
                    format!("error: unknown tool '{tool}'")
                } else {
                    let code = tool_call_code(&tool, &arguments);
                    let job = ExecJob::new(&code, &task.tools, env.limits).with_helper(HelperRoute {
                        gateway: &gateway,
                        model: env.model,
                        scope: &task.id,
                    });
                    match env.executor.execute(&job) {
                        Ok(outcome) => {
                            exec_ms += outcome.duration_ms;
                            observation_text(&outcome)
                        }
                        Err(e @ (ExecError::Protocol(_) | ExecError::Config(_))) => {
                            return finish(steps, exec_ms, None, turn, &gateway, TerminatedBy::Error, Some(e.to_string()))
                        }
                        Err(e) => format!("error: {e}"),
                    }
                }
            }
            Err(e) => format!("parse error: {e}"),
        };
        steps.push(Step {
            action: action_text,
            observation,
        });
    }
    finish(steps, exec_ms, None, env.max_steps, &gateway, TerminatedBy::StepLimit, None)
}

fn run_in_session(
    session: &mut dyn ExecSession,
    code: &str,
    task: &TaskSpec,
    env: &AgentEnv<'_>,
    gateway: &Gateway,
) -> Result<ExecutionOutcome, ExecError> {
    let job = ExecJob::new(code, &task.tools, env.limits).with_helper(HelperRoute {
        gateway,
        model: env.model,
        scope: &task.id,
    });
    session.execute(&job)
}

/// Runs a CodeAct loop: one code action per model call, executed in a
/// namespace that keeps its state between steps.
pub fn codeact_loop(task: &TaskSpec, env: &AgentEnv<'_>, termination: Termination) -> BaselineRun {
    let gateway = env.gateway.fork();
    let tpl = template(CODEACT_TEMPLATE);
    let mut steps: Vec<Step> = Vec::new();
    let mut exec_ms = 0u64;
    let mut session = match env.executor.open_session() {
        Ok(s) => s,
        Err(e) => return finish(steps, exec_ms, None, 0, &gateway, TerminatedBy::Error, Some(e.to_string())),
    };
    for turn in 1..=env.max_steps {
        let prompt = match render_root_prompt(&tpl, task, &render_steps(&steps)) {
            Ok(p) => p,
            Err(e) => return finish(steps, exec_ms, None, turn - 1, &gateway, TerminatedBy::Error, Some(e.to_string())),
        };
        let reply = match agent_call(env, &gateway, task, prompt, turn) {
            Ok(r) => r,
            Err(e) => return finish(steps, exec_ms, None, turn, &gateway, TerminatedBy::Error, Some(e)),
        };
        if let Some(solution) = tagged_span(&reply, "<solution>", "</solution>") {
            let solution = solution.to_string();
            match termination {
                Termination::AnswerTag => {
                    steps.push(Step {
                        action: format!("<solution>{solution}</solution>"),
                        observation: String::new(),
                    });
                    return finish(steps, exec_ms, Some(solution), turn, &gateway, TerminatedBy::Answer, None);
                }
                Termination::GtMatch if check_answer(&solution, &task.checker) => {
                    steps.push(Step {
                        action: format!("<solution>{solution}</solution>"),
                        observation: String::new(),
                    });
                    return finish(steps, exec_ms, Some(solution), turn, &gateway, TerminatedBy::GtMatch, None);
                }
                Termination::GtMatch => {
                    steps.push(Step {
                        action: format!("<solution>{solution}</solution>"),
                        observation: "The answer is not correct yet.".into(),
                    });
                    continue;
                }
            }
        }
        let draft = parse_tagged(&reply);
        if draft.code.is_empty() {
            steps.push(Step {
                action: reply.trim().to_string(),
                observation: format!("parse error: expected {EXECUTE_OPEN}...{EXECUTE_CLOSE} or <solution>...</solution>"),
            });
            continue;
        }
        let outcome = match run_in_session(session.as_mut(), &draft.code, task, env, &gateway) {
            Ok(o) => o,
            Err(e @ (ExecError::Protocol(_) | ExecError::Config(_))) => {
                return finish(steps, exec_ms, None, turn, &gateway, TerminatedBy::Error, Some(e.to_string()))
            }
            Err(e) => ExecutionOutcome::exception(e.to_string()),
        };
        exec_ms += outcome.duration_ms;
        let observation = observation_text(&outcome);
        steps.push(Step {
            action: draft.code,
            observation: observation.clone(),
        });
        if termination == Termination::GtMatch
            && outcome.status == ExecStatus::Ok
            && check_answer(&observation, &task.checker)
        {
            return finish(steps, exec_ms, Some(observation), turn, &gateway, TerminatedBy::GtMatch, None);
        }
    }
    finish(steps, exec_ms, None, env.max_steps, &gateway, TerminatedBy::StepLimit, None)
}

/// Bundled baseline prompts, for inspection.
pub fn baseline_templates() -> Result<Vec<PromptTemplate>, PromptError> {
    Ok(vec![
        PromptTemplate::parse_file(REACT_TEMPLATE)?,
        PromptTemplate::parse_file(CODEACT_TEMPLATE)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::{ScriptTable, ScriptedExecutor};
    use crate::gateway::{Matcher, ScriptedBackend, Transcript};
    use crate::model::{AnswerChecker, ToolDescription};

    fn task() -> TaskSpec {
        TaskSpec {
            id: "t1".into(),
            query: "What is 2 + 3?".into(),
            tools: vec![ToolDescription {
                name: "add".into(),
                description: "Adds two numbers.".into(),
                fn_signature: "add(a: int, b: int) -> int".into(),
                output_example: Some("5".into()),
            }],
            checker: AnswerChecker::keywords_all(["5"]),
            category: "math".into(),
        }
    }

    fn steps_script(replies: &[&str]) -> Gateway {
        let mut t = Transcript::new();
        for (i, r) in replies.iter().enumerate() {
            t.push(Matcher::parse_tag_ordinal(&format!("t1:agent_step#{}", i + 1)).unwrap(), *r);
        }
        Gateway::from_backend(ScriptedBackend::new(t))
    }

    fn env<'a>(gw: &'a Gateway, model: &'a ModelSpec, ex: &'a dyn Executor, max_steps: u32) -> AgentEnv<'a> {
        AgentEnv {
            model,
            gateway: gw,
            executor: ex,
            limits: ExecutorLimits::default(),
            max_steps,
        }
    }

    #[test]
    fn bundled_templates_are_valid() {
        assert_eq!(baseline_templates().unwrap().len(), 2);
    }

    #[test]
    fn react_immediate_answer() {
        let gw = steps_script(&[r#"<thought>easy</thought><action>{"final_answer": "5"}</action>"#]);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new());
        let run = react_loop(&task(), &env(&gw, &model, &ex, 10));
        assert_eq!(run.turns, 1);
        assert_eq!(run.terminated_by, TerminatedBy::Answer);
        assert!(run.correct(&task()));
        // whitespace-separated tokens of the single reply
        assert_eq!(run.output_words, 2);
    }

    #[test]
    fn react_step_limit() {
        let replies: Vec<String> = (0..10).map(|_| "<thought>hmm</thought>".to_string()).collect();
        let refs: Vec<&str> = replies.iter().map(String::as_str).collect();
        let gw = steps_script(&refs);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new());
        let run = react_loop(&task(), &env(&gw, &model, &ex, 10));
        assert_eq!(run.turns, 10);
        assert_eq!(run.terminated_by, TerminatedBy::StepLimit);
        assert!(run.steps.iter().all(|s| s.observation.starts_with("parse error")));
    }

    #[test]
    fn react_tool_then_answer() {
        let gw = steps_script(&[
            r#"<thought>add</thought><action>{"tool": "add", "arguments": {"a": 2, "b": 3}}</action>"#,
            r#"<thought>done</thought><action>{"final_answer": "5"}</action>"#,
        ]);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new().substring("print(add(**_args))", ExecutionOutcome::ok("5\n")));
        let run = react_loop(&task(), &env(&gw, &model, &ex, 10));
        assert_eq!(run.steps.len(), 2);
        assert_eq!(run.steps[0].observation, "5");
        assert_eq!(run.turns, 2);
    }

    #[test]
    fn tool_code_embeds_json_literal() {
        let mut args = serde_json::Map::new();
        args.insert("text".into(), Value::String("it's \"quoted\"\n".into()));
        let code = tool_call_code("echo", &args);
        assert!(code.starts_with("import json\n_args = json.loads(\""));
        assert!(code.ends_with("print(echo(**_args))"));
    }

    #[test]
    fn parse_react_variants() {
        assert_eq!(
            parse_react_action(r#"<action>{"final_answer": 5}</action>"#).unwrap(),
            ReactAction::Answer("5".into())
        );
        assert!(parse_react_action("<action>[1]</action>").is_err());
        assert!(parse_react_action(r#"<action>{"tool": "x", "arguments": 3}</action>"#).is_err());
        assert!(matches!(
            parse_react_action(r#"<action>{"tool": "x"}</action>"#).unwrap(),
            ReactAction::Call { .. }
        ));
    }

    #[test]
    fn codeact_gt_match_first_step() {
        let gw = steps_script(&["<thought>t</thought><execute>print(add(2, 3))</execute>"]);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new().substring("add(2, 3)", ExecutionOutcome::ok("5\n")));
        let run = codeact_loop(&task(), &env(&gw, &model, &ex, 10), Termination::GtMatch);
        assert_eq!(run.turns, 1);
        assert_eq!(run.terminated_by, TerminatedBy::GtMatch);
    }

    #[test]
    fn codeact_answer_tag_never_emitted() {
        let replies: Vec<String> = (0..4)
            .map(|i| format!("<thought>t</thought><execute>x{i} = {i}</execute>"))
            .collect();
        let refs: Vec<&str> = replies.iter().map(String::as_str).collect();
        let gw = steps_script(&refs);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new());
        let run = codeact_loop(&task(), &env(&gw, &model, &ex, 4), Termination::AnswerTag);
        assert_eq!(run.turns, 4);
        assert_eq!(run.terminated_by, TerminatedBy::StepLimit);
        assert!(run.final_answer.is_none());
    }

    #[test]
    fn codeact_solution_tag() {
        let gw = steps_script(&["<thought>t</thought><solution>5</solution>"]);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new());
        let run = codeact_loop(&task(), &env(&gw, &model, &ex, 10), Termination::AnswerTag);
        assert_eq!((run.turns, run.terminated_by), (1, TerminatedBy::Answer));
        assert_eq!(run.final_answer.as_deref(), Some("5"));
    }

    #[test]
    fn gateway_failure_ends_run() {
        let gw = steps_script(&[]);
        let model = ModelSpec::scripted("m");
        let ex = ScriptedExecutor::new(ScriptTable::new());
        let run = codeact_loop(&task(), &env(&gw, &model, &ex, 10), Termination::AnswerTag);
        assert_eq!(run.terminated_by, TerminatedBy::Error);
        assert_eq!(run.turns, 1);
        assert!(run.error.is_some());
    }
}
