//! Uniform access to chat-completion backends.
//!
//! The [`Gateway`] runs in one of three modes:
//!
//! - **live**: forward every request to a [`ChatBackend`] with bounded retries;
//! - **record**: same as live, and persist each `(TranscriptKey, response)`
//!   pair to an [`Archive`];
//! - **replay**: answer exclusively from an archive. A miss is an error and
//!   never falls through to a backend.
//!
//! Token counts come from the backend when it reports usage and from
//! [`count_tokens`] otherwise.

mod archive;
mod http;
mod scripted;
mod tokenizer;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use archive::{Archive, ArchiveError, ArchiveRecord, ARCHIVE_SCHEMA_VERSION};
pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{FailingBackend, ScriptedBackend};
pub use tokenizer::{count_tokens, token_spans, truncate_to_tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(Role::Tool, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            max_output_tokens: 4096,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("messages must not be empty".into()))?;
        if !matches!(first.role, Role::System | Role::User) {
            return Err(GatewayError::InvalidRequest(format!(
                "first message must have role system or user, got {}",
                first.role.as_str()
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be a non-negative finite number".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// Usage block as reported by a backend, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// Raw backend answer before token accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    /// Transport failures, 5xx and 429 are retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("replay archive has no record for transcript key {0}")]
    ReplayMiss(TranscriptKey),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// SHA-256 digest over the canonical form of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranscriptKey(String);

impl TranscriptKey {
    /// Version tag mixed into every digest; bump when the canonical form changes.
    pub const CANONICAL_VERSION: &'static str = "transcript-key/v1";

    pub fn of(request: &CompletionRequest) -> Self {
        let digest = Sha256::digest(canonical_request(request).as_bytes());
        TranscriptKey(hex::encode(digest))
    }

    pub fn from_hex(hex: impl Into<String>) -> Self {
        TranscriptKey(hex.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TranscriptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n")
}

/// Canonical serialization hashed by [`TranscriptKey::of`]: a compact JSON
/// object with lexicographically sorted keys, LF line endings inside every
/// string, and no whitespace between tokens.
pub fn canonical_request(request: &CompletionRequest) -> String {
    // serde_json::Map is ordered by key, so object fields come out sorted.
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "content": normalize_newlines(&m.content),
                "role": m.role.as_str(),
            })
        })
        .collect();
    let value = serde_json::json!({
        "canonical_version": TranscriptKey::CANONICAL_VERSION,
        "max_output_tokens": request.max_output_tokens,
        "messages": messages,
        "model_id": request.model_id,
        "stop_sequences": request.stop_sequences.iter().map(|s| normalize_newlines(s)).collect::<Vec<_>>(),
        "temperature": request.temperature,
    });
    serde_json::to_string(&value).expect("json values always serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Arc<dyn ChatBackend>>,
    archive: Option<Arc<Archive>>,
    retry: RetryPolicy,
    sleeper: Sleeper,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn live(backend: Arc<dyn ChatBackend>) -> Self {
        Self::build(GatewayMode::Live, Some(backend), None)
    }

    pub fn record(backend: Arc<dyn ChatBackend>, archive: Archive) -> Self {
        Self::build(GatewayMode::Record, Some(backend), Some(Arc::new(archive)))
    }

    pub fn replay(archive: Archive) -> Self {
        Self::build(GatewayMode::Replay, None, Some(Arc::new(archive)))
    }

    /// Config-driven constructor. Record and live need a backend, record and
    /// replay need an archive. A backend passed in replay mode is kept but
    /// never called.
    pub fn new(
        mode: GatewayMode,
        backend: Option<Arc<dyn ChatBackend>>,
        archive: Option<Archive>,
    ) -> Result<Self, GatewayError> {
        let missing = |what: &str| {
            GatewayError::InvalidRequest(format!("{mode:?} gateway requires {what}"))
        };
        match mode {
            GatewayMode::Live if backend.is_none() => return Err(missing("a backend")),
            GatewayMode::Record if backend.is_none() => return Err(missing("a backend")),
            GatewayMode::Record | GatewayMode::Replay if archive.is_none() => {
                return Err(missing("an archive"))
            }
            _ => {}
        }
        Ok(Self::build(mode, backend, archive.map(Arc::new)))
    }

    fn build(
        mode: GatewayMode,
        backend: Option<Arc<dyn ChatBackend>>,
        archive: Option<Arc<Archive>>,
    ) -> Self {
        Self {
            mode,
            backend,
            archive,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replace the backoff sleep; tests use this to avoid real delays.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let key = TranscriptKey::of(request);
        match self.mode {
            GatewayMode::Replay => {
                let archive = self.archive.as_ref().expect("replay gateway has an archive");
                archive
                    .get(&key)
                    .map(|rec| rec.response.clone())
                    .ok_or(GatewayError::ReplayMiss(key))
            }
            GatewayMode::Live => self.call_backend(request),
            GatewayMode::Record => {
                let response = self.call_backend(request)?;
                let archive = self.archive.as_ref().expect("record gateway has an archive");
                archive.put(ArchiveRecord {
                    schema_version: ARCHIVE_SCHEMA_VERSION,
                    key,
                    request: request.clone(),
                    response: response.clone(),
                })?;
                Ok(response)
            }
        }
    }

    fn call_backend(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let backend = self.backend.as_ref().expect("live gateway has a backend");
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match backend.complete(request) {
                Ok(reply) => return Ok(account_tokens(request, reply)),
                Err(err) if err.is_retryable() && attempt < self.retry.max_attempts => {
                    tracing::warn!(attempt, error = %err, "retrying completion request");
                    (self.sleeper)(backoff);
                    backoff *= 2;
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        attempts: attempt,
                        source,
                    })
                }
            }
        }
    }
}

fn account_tokens(request: &CompletionRequest, reply: BackendReply) -> CompletionResponse {
    let (prompt_tokens, output_tokens) = match reply.usage {
        Some(u) => (u.prompt_tokens, u.output_tokens),
        None => (
            request.messages.iter().map(|m| count_tokens(&m.content)).sum(),
            count_tokens(&reply.content),
        ),
    };
    CompletionResponse {
        content: reply.content,
        finish_reason: reply.finish_reason,
        prompt_tokens,
        output_tokens,
    }
}
