//! Chat-completion client: request types, an OpenAI-compatible HTTP provider
//! with retries, and a record/replay store keyed by request digest.

mod http;
mod replay;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::HttpProvider;
pub use replay::{RecordReplayStore, ReplayMode};

/// Sampling temperature for data-collection calls.
pub const COLLECTION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for evaluation-style calls.
pub const EVAL_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {attempts} attempt(s): {last_error}")]
    ProviderUnavailable { attempts: u32, last_error: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("provider returned an empty response")]
    ResponseEmpty,
    #[error("no recording for request digest {digest}")]
    MissingRecording { digest: String },
    #[error("recording store error: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
    /// Opaque image reference; absent for text-only prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            image_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    /// Single user message request.
    pub fn user(model_id: &str, prompt: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            messages: vec![ChatMessage::new(ChatRole::User, prompt)],
            temperature,
            max_tokens: 1024,
            model_id: model_id.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("at least one message is required".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex sha256 over the canonical JSON encoding of the request. Provider
    /// settings never enter the digest.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex(&Sha256::digest(&canonical))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: vec![500, 2000, 8000],
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry_index: usize) -> u64 {
        match self.backoff_ms.len() {
            0 => 0,
            n => self.backoff_ms[retry_index.min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credentials_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.retry.max_attempts == 0 {
            return Err(LlmError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that turns a chat request into assistant text.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Provider backed by a closure. Handy for tests and offline pipelines.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

impl<F> fmt::Debug for FnProvider<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnProvider")
    }
}

/// Validates the request, calls the provider and rejects empty replies.
pub fn complete(provider: &dyn ChatProvider, request: &ChatRequest) -> Result<String, LlmError> {
    request.validate()?;
    let text = provider.complete(request)?;
    if text.trim().is_empty() {
        return Err(LlmError::ResponseEmpty);
    }
    Ok(text)
}
