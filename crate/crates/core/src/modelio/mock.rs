//! Deterministic, rule-based stand-in for a chat-completions endpoint.
//!
//! Answers are pure functions of (model name, question, image bytes), so
//! repeated runs reproduce exactly. Text-only prompts are recognised as
//! rephrasing, translation or rotation-judging requests and answered in the
//! formats those stages expect.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::wire::{ChatRequest, ContentPart};

#[derive(Debug, Clone, Default)]
pub struct MockConfig {
    /// Artificial latency per request.
    pub delay_ms: u64,
    /// Answer the first `fail_first` requests with `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Refuse every visual question on content-policy grounds.
    pub refuse_all: bool,
}

/// Counters observable from tests.
#[derive(Debug, Default)]
pub struct MockStats {
    pub requests: AtomicUsize,
    pub vqa_requests: AtomicUsize,
    pub text_requests: AtomicUsize,
    pub failures: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn vqa_requests(&self) -> usize {
        self.vqa_requests.load(Ordering::SeqCst)
    }

    pub fn text_requests(&self) -> usize {
        self.text_requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

struct AppState {
    config: MockConfig,
    stats: Arc<MockStats>,
}

/// A running mock server bound to a local ephemeral port.
pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub async fn start(config: MockConfig) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", config).await
    }

    pub async fn bind(addr: &str, config: MockConfig) -> std::io::Result<Self> {
        let stats = Arc::new(MockStats::default());
        let state = Arc::new(AppState {
            config,
            stats: stats.clone(),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(handle))
            .with_state(state);
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            stats,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle(State(state): State<Arc<AppState>>, Json(req): Json<ChatRequest>) -> Response {
    let stats = &state.stats;
    let n = stats.requests.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(stats);
    if state.config.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(state.config.delay_ms)).await;
    }
    if n < state.config.fail_first {
        stats.failures.fetch_add(1, Ordering::SeqCst);
        let status = StatusCode::from_u16(state.config.fail_status).unwrap_or(StatusCode::TOO_MANY_REQUESTS);
        return (status, "injected failure").into_response();
    }

    let mut text = String::new();
    let mut image: Option<Vec<u8>> = None;
    for msg in &req.messages {
        for part in &msg.content {
            match part {
                ContentPart::Text { text: t } => text.push_str(t),
                ContentPart::ImageUrl { image_url } => {
                    image = Some(image_url.url.as_bytes().to_vec());
                }
            }
        }
    }

    let body = match image {
        Some(img) => {
            stats.vqa_requests.fetch_add(1, Ordering::SeqCst);
            if state.config.refuse_all {
                serde_json::json!({"choices": [{
                    "message": {"content": null, "refusal": "I can't help with that."},
                    "finish_reason": "stop"
                }]})
            } else {
                let (answer, prob) = answer_for(&req.model, &text, &img);
                let mut choice = serde_json::json!({
                    "message": {"content": answer},
                    "finish_reason": "stop"
                });
                if req.logprobs {
                    choice["logprobs"] = serde_json::json!({"content": [
                        {"token": answer, "logprob": prob.ln()}
                    ]});
                }
                serde_json::json!({"choices": [choice]})
            }
        }
        None => {
            stats.text_requests.fetch_add(1, Ordering::SeqCst);
            serde_json::json!({"choices": [{
                "message": {"content": text_reply(&text)},
                "finish_reason": "stop"
            }]})
        }
    };
    Json(body).into_response()
}

fn unit(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// The underlying question once rephrasing or translation decorations are removed.
pub fn question_core(question: &str) -> String {
    let mut q = question.trim();
    if q.starts_with('[') {
        if let Some(end) = q.find("] ") {
            q = &q[end + 2..];
        }
    }
    q = q.strip_suffix(" Please answer in English.").unwrap_or(q);
    if let Some(open) = q.rfind(" (variant ") {
        if q.ends_with(')') {
            q = &q[..open];
        }
    }
    q.to_string()
}

/// How unstable the mock is on a question, in [0, 1).
pub fn difficulty(core: &str) -> f64 {
    unit(&[b"difficulty", core.as_bytes()])
}

/// The mock's default answer to a question.
pub fn base_answer(core: &str) -> &'static str {
    if unit(&[b"answer", core.as_bytes()]) < 0.5 {
        "yes"
    } else {
        "no"
    }
}

fn robustness(model: &str) -> f64 {
    0.6 + 0.8 * unit(&[b"robustness", model.as_bytes()])
}

/// (raw answer, probability) for a visual question.
pub fn answer_for(model: &str, question: &str, image: &[u8]) -> (&'static str, f64) {
    let core = question_core(question);
    let d = difficulty(&core);
    let mut yes = base_answer(&core) == "yes";
    if unit(&[b"bias", model.as_bytes(), core.as_bytes()]) < 0.06 {
        yes = !yes;
    }
    let flip_rate = 0.4 * d * d * robustness(model);
    let flipped = unit(&[b"flip", model.as_bytes(), question.as_bytes(), image]) < flip_rate;
    if flipped {
        yes = !yes;
    }
    let mut prob = 0.55 + 0.44 * (1.0 - d);
    if flipped {
        prob *= 0.8;
    }
    (if yes { "Yes." } else { "No." }, prob)
}

const ROTATION_WORDS: [&str; 7] = ["left", "right", "top", "bottom", "facing", "corner", "upside"];

fn text_reply(prompt: &str) -> String {
    let question = prompt
        .rsplit_once("The question is: ")
        .map(|(_, q)| q.trim().to_string())
        .unwrap_or_default();
    if prompt.contains("rephrased variants") {
        let list: Vec<String> = (1..=10).map(|k| format!("{question} (variant {k})")).collect();
        return format!(
            "Here is the list:\n{}",
            serde_json::to_string(&list).expect("strings serialize")
        );
    }
    if let Some(rest) = prompt.split_once("Translate the question into ").map(|(_, r)| r) {
        let language = rest.split(',').next().unwrap_or("").trim();
        let code: String = language.chars().take(2).collect::<String>().to_lowercase();
        let list = vec![format!("[{code}] {question} Please answer in English.")];
        return serde_json::to_string(&list).expect("strings serialize");
    }
    if prompt.contains("rotation-sensitive") {
        let questions: Vec<String> = prompt
            .rfind("\n[")
            .and_then(|i| serde_json::from_str(prompt[i..].trim()).ok())
            .unwrap_or_default();
        let sensitive: Vec<&String> = questions
            .iter()
            .filter(|q| {
                let lower = q.to_lowercase();
                ROTATION_WORDS.iter().any(|w| lower.contains(w))
            })
            .collect();
        return serde_json::to_string(&sensitive).expect("strings serialize");
    }
    "ok".to_string()
}
