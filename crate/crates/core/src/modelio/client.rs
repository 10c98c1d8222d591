use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use super::cache::DiskCache;
use super::wire::{ChatMessage, ChatRequest, ChatResponse, ContentPart, ImageUrl};
use super::{
    extract_confidence, normalize_answer, EndpointConfig, ModelError, TextGenerator, REFUSAL_TOKEN,
};

/// Retries after the first attempt for transient failures.
pub const MAX_RETRIES: u32 = 3;

/// A model reply with normalization applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub raw_text: String,
    pub normalized: String,
    pub confidence: Option<f64>,
    pub latency_ms: u64,
}

struct Inner {
    config: EndpointConfig,
    http: reqwest::Client,
    cache: Option<DiskCache>,
    permits: Semaphore,
    token: Option<String>,
    template_hash: String,
}

/// Client for one OpenAI-compatible endpoint. Cheap to clone; clones share
/// the cache and the in-flight limit.
#[derive(Clone)]
pub struct ChatClient {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.inner.config.name)
            .field("base_url", &self.inner.config.base_url)
            .finish()
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ChatClient {
    pub fn new(config: EndpointConfig, cache: Option<DiskCache>) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::InvalidRequest)?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ModelError::InvalidRequest(format!("auth variable {var} is not set"))
            })?),
            None => None,
        };
        let template_hash = sha_hex(config.prompt_template.as_bytes());
        Ok(ChatClient {
            inner: Arc::new(Inner {
                permits: Semaphore::new(config.max_parallel),
                config,
                http,
                cache,
                token,
                template_hash,
            }),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.inner.config
    }

    pub fn name(&self) -> &str {
        &self.inner.config.name
    }

    /// Cache key for an (image, question) query against this endpoint.
    pub fn cache_key(&self, png: &[u8], question: &str) -> String {
        let c = &self.inner.config;
        let params = format!(
            "model={};temperature={};max_tokens={};logprobs={}",
            c.model, c.temperature, c.max_tokens, c.logprobs
        );
        DiskCache::key(&[
            b"vqa",
            c.name.as_bytes(),
            params.as_bytes(),
            sha_hex(png).as_bytes(),
            question.as_bytes(),
            self.inner.template_hash.as_bytes(),
        ])
    }

    pub fn is_cached(&self, png: &[u8], question: &str) -> bool {
        self.inner
            .cache
            .as_ref()
            .is_some_and(|c| c.contains(&self.cache_key(png, question)))
    }

    /// Ask the endpoint about a PNG-encoded image. Cached replies are returned
    /// without touching the network.
    pub async fn query_png(&self, png: &[u8], question: &str) -> Result<Reply, ModelError> {
        if question.trim().is_empty() {
            return Err(ModelError::InvalidRequest("empty question".into()));
        }
        let key = self.cache_key(png, question);
        if let Some(hit) = self.inner.cache.as_ref().and_then(|c| c.get::<Reply>(&key)) {
            return Ok(hit);
        }
        let c = &self.inner.config;
        let text = c.prompt_template.replace("{question}", question);
        let url = format!("data:image/png;base64,{}", BASE64.encode(png));
        let parts = vec![
            ContentPart::ImageUrl {
                image_url: ImageUrl { url },
            },
            ContentPart::Text { text },
        ];
        let reply = self.complete(parts, c.logprobs).await?;
        if let Some(cache) = &self.inner.cache {
            if let Err(e) = cache.put(&key, &reply) {
                tracing::warn!(error = %e, "failed to write answer cache entry");
            }
        }
        Ok(reply)
    }

    pub async fn query(&self, image: &image::RgbImage, question: &str) -> Result<Reply, ModelError> {
        self.query_png(&crate::corpus::encode_png(image), question).await
    }

    async fn complete(&self, parts: Vec<ContentPart>, logprobs: bool) -> Result<Reply, ModelError> {
        let c = &self.inner.config;
        let body = ChatRequest {
            model: c.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: parts,
            }],
            temperature: c.temperature,
            max_tokens: c.max_tokens,
            logprobs,
        };
        let _permit = self
            .inner
            .permits
            .acquire()
            .await
            .expect("semaphore is never closed");
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.send_once(&body).await {
                Ok(mut reply) => {
                    reply.latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(reply);
                }
                Err(e) if e.is_transient() && attempt < MAX_RETRIES => {
                    let delay = c.retry_base_ms.saturating_mul(1 << attempt);
                    tracing::debug!(endpoint = %c.name, attempt, error = %e, "retrying");
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn send_once(&self, body: &ChatRequest) -> Result<Reply, ModelError> {
        let c = &self.inner.config;
        let url = format!("{}/chat/completions", c.base_url.trim_end_matches('/'));
        let mut req = self.inner.http.post(url).json(body);
        if let Some(token) = &self.inner.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ModelError::Http {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::Decode(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(ModelError::EmptyReply)?;
        if choice.is_refusal() {
            return Ok(Reply {
                raw_text: REFUSAL_TOKEN.to_string(),
                normalized: REFUSAL_TOKEN.to_string(),
                confidence: None,
                latency_ms: 0,
            });
        }
        let raw_text = choice.message.content.clone().unwrap_or_default();
        if raw_text.trim().is_empty() {
            return Err(ModelError::EmptyReply);
        }
        Ok(Reply {
            normalized: normalize_answer(&raw_text),
            confidence: extract_confidence(&choice),
            raw_text,
            latency_ms: 0,
        })
    }
}

impl TextGenerator for ChatClient {
    fn id(&self) -> &str {
        &self.inner.config.name
    }

    async fn generate(&self, prompt: &str) -> Result<String, ModelError> {
        let parts = vec![ContentPart::Text {
            text: prompt.to_string(),
        }];
        self.complete(parts, false).await.map(|r| r.raw_text)
    }
}
