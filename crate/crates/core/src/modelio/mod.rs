//! Talking to chat-completion endpoints: answer normalization, confidence
//! extraction, a content-addressed response cache, the HTTP client, the
//! run matrix, and a deterministic mock server for tests and demos.

pub(crate) mod cache;
mod client;
mod matrix;
pub mod mock;
mod wire;

use std::future::Future;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::DiskCache;
pub use client::{ChatClient, Reply};
pub use matrix::{read_answer_log, run_matrix, write_answer_log, MatrixError, ORIGINAL_QUESTION_ID};
pub use wire::{ChatResponse, Choice, LogProbs, TokenLogProb};

/// Distinguished answer recorded when an endpoint refuses on content policy.
pub const REFUSAL_TOKEN: &str = "⟨refusal⟩";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("empty reply")]
    EmptyReply,
    #[error("undecodable reply: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ModelError {
    /// Worth retrying: timeouts, rate limits, server errors, empty replies.
    pub fn is_transient(&self) -> bool {
        match self {
            ModelError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            ModelError::Transport(_) | ModelError::EmptyReply => true,
            ModelError::Decode(_) | ModelError::InvalidRequest(_) => false,
        }
    }
}

/// Anything that turns a prompt into text: rephrasing and translation
/// generators, the rotation judge.
pub trait TextGenerator {
    /// Stable identifier, part of every cache key derived from this generator.
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str) -> impl Future<Output = Result<String, ModelError>> + Send;
}

/// Connection and sampling settings for one endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    /// Model identifier sent in the request body.
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub request_timeout_secs: u64,
    pub max_parallel: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Ask for token log-probabilities to derive a confidence.
    pub logprobs: bool,
    /// Text sent with the image; `{question}` is substituted.
    pub prompt_template: String,
    /// First retry delay; doubles on every further retry.
    pub retry_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            name: "default".into(),
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            auth_env: None,
            request_timeout_secs: 60,
            max_parallel: 4,
            temperature: 0.0,
            max_tokens: 64,
            logprobs: true,
            prompt_template: "{question}".into(),
            retry_base_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("endpoint name is empty".into());
        }
        if self.max_parallel == 0 {
            return Err(format!("endpoint {}: max_parallel must be >= 1", self.name));
        }
        if !self.prompt_template.contains("{question}") {
            return Err(format!("endpoint {}: prompt_template lacks {{question}}", self.name));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| format!("endpoint {}: bad base_url: {e}", self.name))?;
        Ok(())
    }
}

/// One model response to one (image variant, question variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub sample_id: String,
    pub image_variant_id: String,
    pub text_variant_id: String,
    pub raw_text: String,
    pub normalized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub latency_ms: u64,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Lowercase, trim, drop trailing dots and collapse whitespace runs.
pub fn normalize_answer(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

/// Product of the answer tokens' probabilities, clamped to [0, 1].
pub fn extract_confidence(choice: &Choice) -> Option<f64> {
    let tokens = &choice.logprobs.as_ref()?.content;
    if tokens.is_empty() {
        return None;
    }
    let total: f64 = tokens.iter().map(|t| t.logprob).sum();
    Some(total.exp().clamp(0.0, 1.0))
}
