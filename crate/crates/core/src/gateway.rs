//! Completion gateway.
//!
//! A [`Gateway`] wraps one [`Backend`] (remote chat-completion endpoints or a
//! scripted transcript) and keeps an audit log of every call so per-run
//! output-word accounting never depends on the caller remembering to count.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::count_output_words;
use crate::sampling::{node_choice, Stream};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no transcript entry matches {tag} request (scope {scope:?}, ordinal {ordinal}): {prompt_head:?}")]
    TranscriptMiss {
        tag: RequestTag,
        scope: Option<String>,
        ordinal: u32,
        prompt_head: String,
    },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// One entry of the model pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

fn default_temperature() -> f64 {
    0.1
}

fn default_max_tokens() -> u32 {
    2048
}

impl ModelSpec {
    /// A model entry for the scripted backend; endpoint and credentials unused.
    pub fn scripted(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            endpoint: String::new(),
            auth_env_var: String::new(),
            temperature: default_temperature(),
            max_output_tokens: default_max_tokens(),
        }
    }
}

/// Non-empty list of models with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelSpec>", into = "Vec<ModelSpec>")]
pub struct ModelPool(Vec<ModelSpec>);

impl ModelPool {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self, GatewayError> {
        if models.is_empty() {
            return Err(GatewayError::Config("model pool is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &models {
            if !seen.insert(m.id.as_str()) {
                return Err(GatewayError::Config(format!("duplicate model id `{}`", m.id)));
            }
            if m.temperature.is_nan() || m.temperature < 0.0 {
                return Err(GatewayError::Config(format!(
                    "model `{}` has negative temperature",
                    m.id
                )));
            }
        }
        Ok(Self(models))
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.0
    }

    pub fn get(&self, id: &str) -> Option<&ModelSpec> {
        self.0.iter().find(|m| m.id == id)
    }
}

impl TryFrom<Vec<ModelSpec>> for ModelPool {
    type Error = GatewayError;

    fn try_from(value: Vec<ModelSpec>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ModelPool> for Vec<ModelSpec> {
    fn from(pool: ModelPool) -> Self {
        pool.0
    }
}

/// Uniform model choice for the node at `coords = (layer, index)`.
pub fn sample_model(
    pool: &[ModelSpec],
    seed: u64,
    coords: (u32, u32),
) -> Result<&ModelSpec, GatewayError> {
    if pool.is_empty() {
        return Err(GatewayError::Config("model pool is empty".into()));
    }
    Ok(&pool[node_choice(seed, coords.0, coords.1, Stream::Model, pool.len())])
}

/// Purpose label carried by every completion request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    NodeGeneration,
    Reflection,
    Summarize,
    HelperTool,
    PromptEvolution,
    /// One step of a multi-turn baseline loop.
    AgentStep,
}

impl RequestTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::NodeGeneration => "node_generation",
            RequestTag::Reflection => "reflection",
            RequestTag::Summarize => "summarize",
            RequestTag::HelperTool => "helper_tool",
            RequestTag::PromptEvolution => "prompt_evolution",
            RequestTag::AgentStep => "agent_step",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "node_generation" => RequestTag::NodeGeneration,
            "reflection" => RequestTag::Reflection,
            "summarize" => RequestTag::Summarize,
            "helper_tool" => RequestTag::HelperTool,
            "prompt_evolution" => RequestTag::PromptEvolution,
            "agent_step" => RequestTag::AgentStep,
            _ => return None,
        })
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub tag: RequestTag,
    /// Routing metadata (usually the task id); never sent to a remote model.
    pub scope: Option<String>,
    /// Logical position of this request among requests with the same scope
    /// and tag, when the caller can assign one independent of timing.
    pub ordinal: Option<u32>,
}

impl CompletionRequest {
    pub fn new(model: &ModelSpec, prompt: impl Into<String>, tag: RequestTag) -> Self {
        Self {
            model_id: model.id.clone(),
            prompt: prompt.into(),
            temperature: model.temperature,
            tag,
            scope: None,
            ordinal: None,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn scope(mut self, scope: impl Into<String>) -> Self {
        self.scope = Some(scope.into());
        self
    }

    pub fn ordinal(mut self, ordinal: u32) -> Self {
        self.ordinal = Some(ordinal);
        self
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<F> Backend for F
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub tag: RequestTag,
    pub model_id: String,
    pub scope: Option<String>,
    pub prompt_chars: usize,
    pub words: u64,
    pub duration_ms: u64,
    pub error: Option<String>,
}

type AuditLog = Arc<Mutex<Vec<AuditEntry>>>;

/// Backend handle plus audit log. Use [`Gateway::fork`] for a per-run handle:
/// it shares the backend, keeps its own log, and still reports every entry
/// to the logs of the gateways it was forked from.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    audit: AuditLog,
    upstream: Vec<AuditLog>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            audit: Arc::default(),
            upstream: Vec::new(),
        }
    }

    pub fn from_backend(backend: impl Backend + 'static) -> Self {
        Self::new(Arc::new(backend))
    }

    pub fn fork(&self) -> Self {
        let mut upstream = self.upstream.clone();
        upstream.push(Arc::clone(&self.audit));
        Self {
            backend: Arc::clone(&self.backend),
            audit: Arc::default(),
            upstream,
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let started = Instant::now();
        let result = if request.prompt.is_empty() {
            Err(GatewayError::InvalidRequest("prompt is empty".into()))
        } else {
            self.backend.complete(request)
        };
        let entry = AuditEntry {
            tag: request.tag,
            model_id: request.model_id.clone(),
            scope: request.scope.clone(),
            prompt_chars: request.prompt.chars().count(),
            words: result.as_ref().map(|t| count_output_words(t)).unwrap_or(0),
            duration_ms: started.elapsed().as_millis() as u64,
            error: result.as_ref().err().map(ToString::to_string),
        };
        tracing::debug!(tag = %entry.tag, model = %entry.model_id, words = entry.words, "completion");
        for log in &self.upstream {
            log.lock().expect("audit lock poisoned").push(entry.clone());
        }
        self.audit.lock().expect("audit lock poisoned").push(entry);
        result
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.audit.lock().expect("audit lock poisoned").clone()
    }

    pub fn audit_words(&self) -> u64 {
        self.audit.lock().expect("audit lock poisoned").iter().map(|e| e.words).sum()
    }

    pub fn audit_count(&self, tag: RequestTag) -> usize {
        self.audit
            .lock()
            .expect("audit lock poisoned")
            .iter()
            .filter(|e| e.tag == tag)
            .count()
    }
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    ExactPrompt(String),
    Substring(String),
    /// The n-th request (1-based) with this tag, optionally restricted to a scope.
    TagAndOrdinal {
        scope: Option<String>,
        tag: RequestTag,
        ordinal: u32,
    },
}

impl Matcher {
    /// Parses a `tag_and_ordinal` value of the form `[scope:]tag#n`.
    pub fn parse_tag_ordinal(value: &str) -> Result<Self, GatewayError> {
        let bad = || {
            GatewayError::Config(format!(
                "bad tag_and_ordinal matcher `{value}` (expected `[scope:]tag#n`)"
            ))
        };
        let (head, n) = value.rsplit_once('#').ok_or_else(bad)?;
        let ordinal: u32 = n.trim().parse().map_err(|_| bad())?;
        if ordinal == 0 {
            return Err(bad());
        }
        let (scope, tag) = match head.rsplit_once(':') {
            Some((s, t)) => (Some(s.to_string()), t),
            None => (None, head),
        };
        let tag = RequestTag::parse(tag.trim()).ok_or_else(bad)?;
        Ok(Matcher::TagAndOrdinal {
            scope,
            tag,
            ordinal,
        })
    }

    fn matches(&self, request: &CompletionRequest, ordinal: u32) -> bool {
        match self {
            Matcher::ExactPrompt(p) => request.prompt == *p,
            Matcher::Substring(s) => request.prompt.contains(s.as_str()),
            Matcher::TagAndOrdinal {
                scope,
                tag,
                ordinal: n,
            } => {
                *tag == request.tag
                    && *n == ordinal
                    && scope
                        .as_deref()
                        .is_none_or(|s| request.scope.as_deref() == Some(s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub matcher: Matcher,
    pub response: String,
    pub max_uses: u32,
}

/// Wire form of a transcript entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranscriptRecord {
    matcher_kind: String,
    matcher_value: String,
    response: String,
    #[serde(default = "one")]
    max_uses: u32,
}

fn one() -> u32 {
    1
}

/// Ordered list of canned responses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, matcher: Matcher, response: impl Into<String>) -> &mut Self {
        self.entries.push(TranscriptEntry {
            matcher,
            response: response.into(),
            max_uses: 1,
        });
        self
    }

    pub fn push_reusable(
        &mut self,
        matcher: Matcher,
        response: impl Into<String>,
        max_uses: u32,
    ) -> &mut Self {
        self.entries.push(TranscriptEntry {
            matcher,
            response: response.into(),
            max_uses,
        });
        self
    }

    pub fn exact(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.push(Matcher::ExactPrompt(prompt.into()), response);
        self
    }

    pub fn substring(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.push(Matcher::Substring(needle.into()), response);
        self
    }

    pub fn ordinal(
        mut self,
        scope: Option<&str>,
        tag: RequestTag,
        ordinal: u32,
        response: impl Into<String>,
    ) -> Self {
        self.push(
            Matcher::TagAndOrdinal {
                scope: scope.map(str::to_string),
                tag,
                ordinal,
            },
            response,
        );
        self
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let records: Vec<TranscriptRecord> = serde_json::from_str(text)
            .map_err(|e| GatewayError::Config(format!("transcript: {e}")))?;
        let mut entries = Vec::with_capacity(records.len());
        for r in records {
            let matcher = match r.matcher_kind.as_str() {
                "exact_prompt" => Matcher::ExactPrompt(r.matcher_value),
                "substring" => Matcher::Substring(r.matcher_value),
                "tag_and_ordinal" => Matcher::parse_tag_ordinal(&r.matcher_value)?,
                other => {
                    return Err(GatewayError::Config(format!(
                        "transcript: unknown matcher_kind `{other}`"
                    )))
                }
            };
            entries.push(TranscriptEntry {
                matcher,
                response: r.response,
                max_uses: r.max_uses,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<TranscriptRecord> = self
            .entries
            .iter()
            .map(|e| {
                let (kind, value) = match &e.matcher {
                    Matcher::ExactPrompt(p) => ("exact_prompt", p.clone()),
                    Matcher::Substring(s) => ("substring", s.clone()),
                    Matcher::TagAndOrdinal {
                        scope,
                        tag,
                        ordinal,
                    } => (
                        "tag_and_ordinal",
                        match scope {
                            Some(s) => format!("{s}:{tag}#{ordinal}"),
                            None => format!("{tag}#{ordinal}"),
                        },
                    ),
                };
                TranscriptRecord {
                    matcher_kind: kind.to_string(),
                    matcher_value: value,
                    response: e.response.clone(),
                    max_uses: e.max_uses,
                }
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("transcript serializes")
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Default)]
struct ScriptState {
    uses: Vec<u32>,
    arrivals: HashMap<(Option<String>, RequestTag), u32>,
}

/// Deterministic backend that answers from a [`Transcript`].
pub struct ScriptedBackend {
    transcript: Transcript,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        let uses = vec![0; transcript.entries.len()];
        Self {
            transcript,
            state: Mutex::new(ScriptState {
                uses,
                arrivals: HashMap::new(),
            }),
        }
    }

    /// Number of times each entry has been consumed, in transcript order.
    pub fn uses(&self) -> Vec<u32> {
        self.state.lock().expect("script lock poisoned").uses.clone()
    }
}

/// Finds the first unexhausted entry matching `request`. The request's own
/// ordinal takes precedence over the arrival counter.
pub fn scripted_lookup(
    transcript: &Transcript,
    uses: &mut [u32],
    request: &CompletionRequest,
    arrival: u32,
) -> Result<String, GatewayError> {
    let ordinal = request.ordinal.unwrap_or(arrival);
    for (i, entry) in transcript.entries.iter().enumerate() {
        if uses[i] < entry.max_uses && entry.matcher.matches(request, ordinal) {
            uses[i] += 1;
            return Ok(entry.response.clone());
        }
    }
    Err(GatewayError::TranscriptMiss {
        tag: request.tag,
        scope: request.scope.clone(),
        ordinal,
        prompt_head: request.prompt.chars().take(80).collect(),
    })
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut state = self.state.lock().expect("script lock poisoned");
        let counter = state
            .arrivals
            .entry((request.scope.clone(), request.tag))
            .or_insert(0);
        *counter += 1;
        let arrival = *counter;
        scripted_lookup(&self.transcript, &mut state.uses, request, arrival)
    }
}

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base * 2^retry.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

/// Chat-completion client over a pool of HTTP endpoints.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    models: HashMap<String, ModelSpec>,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(pool: &ModelPool, retry: RetryPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            models: pool
                .models()
                .iter()
                .map(|m| (m.id.clone(), m.clone()))
                .collect(),
            retry,
        })
    }

    fn attempt(
        &self,
        model: &ModelSpec,
        token: &str,
        request: &CompletionRequest,
    ) -> Result<String, (bool, String)> {
        let body = json!({
            "model": model.id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": model.max_output_tokens,
        });
        let response = self
            .client
            .post(&model.endpoint)
            .bearer_auth(token)
            .json(&body)
            .send()
            .map_err(|e| (true, format!("transport: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = response.text().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| (true, format!("decode: {e}")))?;
        extract_content(&value).ok_or_else(|| (false, "response has no choices[0].message.content".into()))
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Reads the first choice's message content from a chat-completion response.
pub fn extract_content(value: &serde_json::Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl Backend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let model = self.models.get(&request.model_id).ok_or_else(|| {
            GatewayError::Config(format!("unknown model `{}`", request.model_id))
        })?;
        let token = std::env::var(&model.auth_env_var).map_err(|_| {
            GatewayError::Config(format!(
                "credential variable `{}` for model `{}` is not set",
                model.auth_env_var, model.id
            ))
        })?;
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.attempt(model, &token, request) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    tracing::warn!(model = %model.id, attempt, "completion failed: {msg}");
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(GatewayError::Backend(format!(
            "{} after {} attempt(s): {last}",
            model.id, self.retry.attempts
        )))
    }
}
