//! Chat-completion backends, message rendering, and field-marker parsing.
//!
//! Two backend kinds exist behind one trait: an OpenAI-compatible HTTP client
//! (with transport-level retries) and a scripted mock that replays an ordered
//! list of canned responses. Mock responses are addressed by a global call
//! sequence reserved at dispatch time, so parallel evaluation workers cannot
//! perturb which script entry a given example receives.
//!
//! Rendering turns a contract plus input values into (system, user) texts;
//! parsing extracts the marker-delimited output fields back out of a raw
//! response. Parse failures are data — the metric penalizes them — never
//! errors.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::contract::{FieldConstraint, TaskContract};
use crate::metric::Prediction;

/// Terminator marker appended after the last output field.
pub const COMPLETED_MARKER: &str = "[[ ## completed ## ]]";

/// The marker line for a named field.
pub fn field_marker(name: &str) -> String {
    format!("[[ ## {name} ## ]]")
}

/// Errors raised while rendering contract inputs.
#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("no value supplied for input field '{field}'")]
    MissingInput { field: String },
}

/// Errors raised by backends. Application-level refusals are never retried.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("scripted mock exhausted: call {index} of a {len}-entry script")]
    ScriptExhausted { index: u64, len: usize },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned status {status}: {message}")]
    Api { status: u16, message: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("cannot read mock script: {0}")]
    Script(String),
}

/// Role a model plays in the calibration workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Reflection,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Student => write!(f, "student"),
            Role::Reflection => write!(f, "reflection"),
        }
    }
}

/// Generation settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub role: Role,
}

impl GenerationSettings {
    /// Student defaults: deterministic decoding, no token limit.
    pub fn student(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            temperature: 0.0,
            max_tokens: None,
            role: Role::Student,
        }
    }

    /// Reflection defaults: diverse decoding with a generous token limit.
    pub fn reflection(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            temperature: 1.0,
            max_tokens: Some(16000),
            role: Role::Reflection,
        }
    }
}

/// Token counts reported by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// One recorded model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub response_text: String,
    pub usage: Option<TokenUsage>,
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpOpenAiCompatible,
    ScriptedMock,
}

/// Raw completion before it is wrapped into a [`ChatExchange`].
#[derive(Debug, Clone)]
pub struct RawCompletion {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

/// A chat-completion provider. Implementations must be callable from
/// concurrent evaluation workers.
pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Reserve `n` consecutive call slots and return the first sequence
    /// number. Callers reserve in a deterministic order (the dispatching
    /// thread, in example order), which makes scripted replies independent of
    /// worker scheduling. Backends that do not address calls by sequence keep
    /// the default.
    fn reserve(&self, n: u64) -> u64 {
        let _ = n;
        0
    }

    fn complete_raw(
        &self,
        settings: &GenerationSettings,
        system_text: &str,
        user_text: &str,
        sequence: u64,
    ) -> Result<RawCompletion, BackendError>;
}

// ---------------------------------------------------------------------------
// Scripted mock backend
// ---------------------------------------------------------------------------

/// Deterministic backend that replays an ordered list of response strings.
///
/// Call `sequence` selects the entry. With `cycle` the script repeats
/// (`sequence % len`); without it, running past the end is a
/// [`BackendError::ScriptExhausted`].
pub struct ScriptedMockBackend {
    script: Vec<String>,
    cycle: bool,
    cursor: AtomicU64,
}

impl ScriptedMockBackend {
    pub fn new(script: Vec<String>) -> Self {
        Self {
            script,
            cycle: false,
            cursor: AtomicU64::new(0),
        }
    }

    pub fn cycling(script: Vec<String>) -> Self {
        Self {
            script,
            cycle: true,
            cursor: AtomicU64::new(0),
        }
    }

    /// Load a script file: a JSON array of response strings.
    pub fn from_file(path: &std::path::Path, cycle: bool) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let script: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Ok(Self {
            script,
            cycle,
            cursor: AtomicU64::new(0),
        })
    }
}

impl Backend for ScriptedMockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::ScriptedMock
    }

    fn reserve(&self, n: u64) -> u64 {
        self.cursor.fetch_add(n, Ordering::SeqCst)
    }

    fn complete_raw(
        &self,
        _settings: &GenerationSettings,
        _system_text: &str,
        _user_text: &str,
        sequence: u64,
    ) -> Result<RawCompletion, BackendError> {
        if self.script.is_empty() || (!self.cycle && sequence >= self.script.len() as u64) {
            return Err(BackendError::ScriptExhausted {
                index: sequence,
                len: self.script.len(),
            });
        }
        let index = (sequence % self.script.len() as u64) as usize;
        Ok(RawCompletion {
            text: self.script[index].clone(),
            usage: None,
        })
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend
// ---------------------------------------------------------------------------

const RETRY_BACKOFF_SECS: [u64; 3] = [1, 2, 4];

/// Chat-completions client for any OpenAI-compatible endpoint.
///
/// Retries transport-level failures with capped exponential backoff
/// (1s/2s/4s); application-level responses, including HTTP error statuses,
/// are returned as-is. Credentials come from the environment at construction
/// and are never serialized.
pub struct HttpOpenAiBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    backoff: Vec<Duration>,
}

impl HttpOpenAiBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self::with_backoff(
            base_url,
            api_key,
            RETRY_BACKOFF_SECS.iter().map(|s| Duration::from_secs(*s)).collect(),
        )
    }

    /// As [`HttpOpenAiBackend::new`] with an explicit retry schedule (one
    /// entry per retry). Used by tests to skip the waits.
    pub fn with_backoff(base_url: &str, api_key: Option<String>, backoff: Vec<Duration>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent,
            backoff,
        }
    }

    fn request_body(
        settings: &GenerationSettings,
        system_text: &str,
        user_text: &str,
    ) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": settings.model_id,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": settings.temperature,
        });
        if let Some(max_tokens) = settings.max_tokens {
            body["max_tokens"] = serde_json::json!(max_tokens);
        }
        body
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<RawCompletion, ureq::Error> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body)?;
        let value: serde_json::Value = response.body_mut().read_json()?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let usage = value.get("usage").and_then(|u| {
            Some(TokenUsage {
                input_tokens: u.get("prompt_tokens")?.as_u64()?,
                output_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(RawCompletion { text, usage })
    }

    fn is_transport_failure(error: &ureq::Error) -> bool {
        matches!(
            error,
            ureq::Error::Io(_)
                | ureq::Error::Timeout(_)
                | ureq::Error::HostNotFound
                | ureq::Error::ConnectionFailed
        )
    }
}

impl Backend for HttpOpenAiBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpOpenAiCompatible
    }

    fn complete_raw(
        &self,
        settings: &GenerationSettings,
        system_text: &str,
        user_text: &str,
        _sequence: u64,
    ) -> Result<RawCompletion, BackendError> {
        let body = Self::request_body(settings, system_text, user_text);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.send_once(&body) {
                Ok(raw) => return Ok(raw),
                Err(error) if Self::is_transport_failure(&error) => {
                    let retry_index = (attempts - 1) as usize;
                    if retry_index >= self.backoff.len() {
                        return Err(BackendError::Transport {
                            attempts,
                            message: error.to_string(),
                        });
                    }
                    std::thread::sleep(self.backoff[retry_index]);
                }
                Err(ureq::Error::StatusCode(status)) => {
                    return Err(BackendError::Api {
                        status,
                        message: "provider refused the request".to_string(),
                    });
                }
                Err(error) => {
                    return Err(BackendError::MalformedResponse(error.to_string()));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

/// One logged model call, tagged with role and dispatch sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCall {
    pub role: Role,
    pub sequence: u64,
    pub exchange: ChatExchange,
}

/// Ordered, synchronized append channel for model calls. Every completed
/// call appears exactly once.
#[derive(Default)]
pub struct RunLog {
    entries: Mutex<Vec<LoggedCall>>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, role: Role, sequence: u64, exchange: ChatExchange) {
        self.entries
            .lock()
            .expect("run log lock")
            .push(LoggedCall { role, sequence, exchange });
    }

    /// All entries, ordered by (role, sequence) so serialized logs are
    /// independent of worker scheduling.
    pub fn snapshot(&self) -> Vec<LoggedCall> {
        let mut entries = self.entries.lock().expect("run log lock").clone();
        entries.sort_by_key(|entry| (entry.role, entry.sequence));
        entries
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("run log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of reported token usage, when any call carried usage data.
    pub fn token_tally(&self) -> Option<TokenUsage> {
        let entries = self.entries.lock().expect("run log lock");
        let mut tally = TokenUsage { input_tokens: 0, output_tokens: 0 };
        let mut any = false;
        for entry in entries.iter() {
            if let Some(usage) = entry.exchange.usage {
                tally.input_tokens += usage.input_tokens;
                tally.output_tokens += usage.output_tokens;
                any = true;
            }
        }
        any.then_some(tally)
    }
}

/// Issue one model call at a freshly reserved sequence slot and log it.
pub fn complete(
    backend: &dyn Backend,
    settings: &GenerationSettings,
    system_text: &str,
    user_text: &str,
    log: &RunLog,
) -> Result<ChatExchange, BackendError> {
    let sequence = backend.reserve(1);
    complete_at(backend, settings, system_text, user_text, sequence, log)
}

/// Issue one model call at an already reserved sequence slot and log it.
pub fn complete_at(
    backend: &dyn Backend,
    settings: &GenerationSettings,
    system_text: &str,
    user_text: &str,
    sequence: u64,
    log: &RunLog,
) -> Result<ChatExchange, BackendError> {
    let timed = backend.kind() == BackendKind::HttpOpenAiCompatible;
    let started = std::time::Instant::now();
    let raw = backend.complete_raw(settings, system_text, user_text, sequence)?;
    let exchange = ChatExchange {
        system_text: system_text.to_string(),
        user_text: user_text.to_string(),
        response_text: raw.text,
        usage: raw.usage,
        latency_ms: timed.then(|| started.elapsed().as_millis() as u64),
    };
    log.append(settings.role, sequence, exchange.clone());
    Ok(exchange)
}

// ---------------------------------------------------------------------------
// Rendering and parsing
// ---------------------------------------------------------------------------

/// Render contract inputs into (system, user) texts.
///
/// The system text is the harness followed by a generated field-contract
/// section: each output field with its description, the decision field's
/// allowed tokens, and the exact marker protocol. The user text lists each
/// input field as a `name: value` block in contract order.
pub fn render_messages(
    contract: &TaskContract,
    inputs: &BTreeMap<String, String>,
) -> Result<(String, String), RenderError> {
    let mut system = String::new();
    system.push_str(contract.harness_text().trim_end());
    system.push_str("\n\nOutput fields, in order:\n");
    for field in contract.output_fields() {
        system.push_str(&format!("- {}: {}", field.name, field.description));
        if let Some(FieldConstraint::TokenSet(tokens)) = &field.constraint {
            system.push_str(&format!(" Allowed tokens: {}.", tokens.join(", ")));
        }
        system.push('\n');
    }
    system.push_str("\nReturn outputs using the field markers exactly, in this order:\n");
    for field in contract.output_fields() {
        system.push_str(&field_marker(&field.name));
        system.push('\n');
    }
    system.push_str(COMPLETED_MARKER);
    system.push_str("\nDo not add other text.\n");

    let mut blocks = Vec::with_capacity(contract.input_fields().len());
    for field in contract.input_fields() {
        let value = inputs.get(&field.name).ok_or_else(|| RenderError::MissingInput {
            field: field.name.clone(),
        })?;
        blocks.push(format!("{}: {}", field.name, value));
    }
    Ok((system, blocks.join("\n\n")))
}

/// Format output-field values in the marker protocol (the inverse of
/// [`parse_fields`] up to outer whitespace).
pub fn format_fields(contract: &TaskContract, values: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for field in contract.output_fields() {
        out.push_str(&field_marker(&field.name));
        out.push('\n');
        if let Some(value) = values.get(&field.name) {
            out.push_str(value);
            out.push('\n');
        }
    }
    out.push_str(COMPLETED_MARKER);
    out
}

/// Extract marker-delimited output fields from a raw response.
///
/// Scanning is top-down and first-match: for each output field the first
/// occurrence of its marker opens its section, which runs to the next marker
/// occurrence of any kind (or the end of text). A missing decision-field
/// marker yields `parse_ok = false` with an empty label, which the metric
/// scores as invalid.
pub fn parse_fields(response_text: &str, contract: &TaskContract) -> Prediction {
    let decision_name = contract.decision_field().name.clone();
    let trace_name = contract
        .output_fields()
        .iter()
        .map(|f| f.name.as_str())
        .find(|name| *name != decision_name);

    // Every marker occurrence, sorted by position.
    let mut occurrences: Vec<(usize, usize, &str)> = Vec::new();
    let mut names: Vec<&str> = contract.output_fields().iter().map(|f| f.name.as_str()).collect();
    names.push("completed");
    for name in &names {
        let marker = field_marker(name);
        let mut start = 0;
        while let Some(pos) = response_text[start..].find(&marker) {
            let absolute = start + pos;
            occurrences.push((absolute, marker.len(), name));
            start = absolute + marker.len();
        }
    }
    occurrences.sort_by_key(|(pos, _, _)| *pos);

    let section_of = |wanted: &str| -> Option<String> {
        let (index, (pos, len, _)) = occurrences
            .iter()
            .enumerate()
            .find(|(_, (_, _, name))| *name == wanted)?;
        let body_start = pos + len;
        let body_end = occurrences
            .get(index + 1)
            .map(|(next_pos, _, _)| *next_pos)
            .unwrap_or(response_text.len());
        Some(response_text[body_start..body_end].trim().to_string())
    };

    let label = section_of(&decision_name);
    let checks = trace_name.and_then(section_of).unwrap_or_default();
    Prediction {
        parse_ok: label.is_some(),
        label_raw: label.unwrap_or_default(),
        checks,
    }
}
