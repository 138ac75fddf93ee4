//! Deterministic OpenAI-compatible stub server.
//!
//! Serves `/v1/completions`, `/v1/chat/completions`, `/v1/embeddings`, and
//! `/v1/nli` with responses derived entirely from the request content (via
//! seeded RNG), so a pipeline run against the stub is reproducible
//! byte-for-byte. Request counters are exposed both on the in-process
//! handle and over `GET /stats`, which lets tests assert things like "the
//! warm-cache re-run issued zero requests".
//!
//! Two completion modes:
//! - `Echo`: numbered filler texts (`resp-0`, `resp-1`, ...) with a
//!   per-prompt running offset; temperature 0 always yields `greedy-resp`.
//! - `Synthetic`: prompts containing `[seen]` get template-collapsed
//!   completion sets with light token noise, everything else gets mutually
//!   distant random sequences. This mirrors the behavior the detector is
//!   built to measure.
//!
//! Failure injection (HTTP 500 on the first or all-after-the-Nth sampling
//! request, or on prompts containing a marker), response caps on `n`, and
//! artificial latency are all configurable.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// How `/v1/completions` and `/v1/chat/completions` produce texts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StubMode {
    #[default]
    Echo,
    Synthetic,
}

impl std::str::FromStr for StubMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "echo" => Ok(StubMode::Echo),
            "synthetic" => Ok(StubMode::Synthetic),
            other => Err(format!("unknown stub mode {other:?}")),
        }
    }
}

/// How the chat endpoint labels n-grams when it receives a labeling task.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum LabelerMode {
    /// Restatement if every token occurs in the problem text, boilerplate
    /// for answer-reporting phrases, logic otherwise.
    #[default]
    Rule,
    /// Same category for every n-gram.
    Fixed(String),
    /// Nonsense categories, to exercise client-side fallback.
    Garbage,
}

impl std::str::FromStr for LabelerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rule" => Ok(LabelerMode::Rule),
            "garbage" => Ok(LabelerMode::Garbage),
            other if !other.is_empty() => Ok(LabelerMode::Fixed(other.to_string())),
            _ => Err("empty labeler mode".to_string()),
        }
    }
}

/// How `/v1/nli` decides labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum NliMode {
    /// Entailment when the first whitespace tokens match, else neutral.
    #[default]
    FirstTokenMatch,
    Fixed(String),
}

#[derive(Debug, Clone, Default)]
pub struct StubConfig {
    pub mode: StubMode,
    /// Sampling requests whose prompt contains this marker fail with 500.
    pub fail_substring: Option<String>,
    /// The first N sampling requests fail with 500 (exercises retries).
    pub fail_first_requests: usize,
    /// Sampling requests after the Nth fail with 500 (forces partial sets).
    pub fail_after_requests: Option<usize>,
    /// Serve at most this many choices per request regardless of `n`.
    pub n_cap: Option<usize>,
    /// Artificial response delay.
    pub latency_ms: u64,
    pub labeler_mode: LabelerMode,
    pub nli_mode: NliMode,
    /// When set, requests must carry `Authorization: Bearer <key>`.
    pub require_auth: Option<String>,
}

/// Request counters, readable in-process or via `GET /stats`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StubStats {
    pub total: usize,
    pub completions: usize,
    pub chat: usize,
    pub embeddings: usize,
    pub nli: usize,
}

/// Shared server state: configuration plus request counters. Opaque;
/// construct with [`shared_state`].
pub struct StubState {
    config: StubConfig,
    total: AtomicUsize,
    completions: AtomicUsize,
    chat: AtomicUsize,
    embeddings: AtomicUsize,
    nli: AtomicUsize,
    /// Sampling requests seen so far, for failure injection windows.
    sampling_seq: AtomicUsize,
    /// Next unserved completion index per prompt, so follow-up requests for
    /// the same prompt continue the sequence instead of repeating it.
    offsets: Mutex<HashMap<String, usize>>,
}

pub fn shared_state(config: StubConfig) -> Arc<StubState> {
    Arc::new(StubState {
        config,
        total: AtomicUsize::new(0),
        completions: AtomicUsize::new(0),
        chat: AtomicUsize::new(0),
        embeddings: AtomicUsize::new(0),
        nli: AtomicUsize::new(0),
        sampling_seq: AtomicUsize::new(0),
        offsets: Mutex::new(HashMap::new()),
    })
}

/// Running stub with its bound address. Shuts down on drop.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds 127.0.0.1 on an ephemeral port and serves on a background
    /// thread with its own single-threaded runtime.
    pub fn spawn(config: StubConfig) -> StubServer {
        let state = shared_state(config);
        let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let thread_state = Arc::clone(&state);
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_io()
                .enable_time()
                .build()
                .expect("stub runtime");
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                    .await
                    .expect("bind stub listener");
                addr_tx.send(listener.local_addr().expect("stub addr")).ok();
                axum::serve(listener, router(thread_state))
                    .with_graceful_shutdown(async {
                        shutdown_rx.await.ok();
                    })
                    .await
                    .expect("stub serve");
            });
        });
        let addr = addr_rx.recv().expect("stub failed to start");
        StubServer { addr, state, shutdown: Some(shutdown_tx), thread: Some(thread) }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> StubStats {
        StubStats {
            total: self.state.total.load(Ordering::SeqCst),
            completions: self.state.completions.load(Ordering::SeqCst),
            chat: self.state.chat.load(Ordering::SeqCst),
            embeddings: self.state.embeddings.load(Ordering::SeqCst),
            nli: self.state.nli.load(Ordering::SeqCst),
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Router over shared state; public so embedders can mount it themselves.
pub fn router(state: Arc<StubState>) -> Router {
    Router::new()
        .route("/v1/completions", post(completions))
        .route("/v1/chat/completions", post(chat_completions))
        .route("/v1/embeddings", post(embeddings))
        .route("/v1/nli", post(nli))
        .route("/stats", get(stats))
        .with_state(state)
}

type Reply = (StatusCode, Json<Value>);

fn error_reply(status: StatusCode, message: &str) -> Reply {
    (status, Json(json!({ "error": { "message": message } })))
}

async fn common_entry(state: &StubState, headers: &HeaderMap) -> Option<Reply> {
    state.total.fetch_add(1, Ordering::SeqCst);
    if state.config.latency_ms > 0 {
        tokio::time::sleep(std::time::Duration::from_millis(state.config.latency_ms)).await;
    }
    if let Some(key) = &state.config.require_auth {
        let expected = format!("Bearer {key}");
        let ok = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(|v| v == expected)
            .unwrap_or(false);
        if !ok {
            return Some(error_reply(StatusCode::UNAUTHORIZED, "missing or bad api key"));
        }
    }
    None
}

/// Failure windows for sampling requests; returns a 500 reply when the
/// current request falls inside one.
fn sampling_gate(state: &StubState, prompt: &str) -> Option<Reply> {
    let seq = state.sampling_seq.fetch_add(1, Ordering::SeqCst);
    if seq < state.config.fail_first_requests {
        return Some(error_reply(StatusCode::INTERNAL_SERVER_ERROR, "injected early failure"));
    }
    if let Some(limit) = state.config.fail_after_requests {
        if seq >= limit {
            return Some(error_reply(StatusCode::INTERNAL_SERVER_ERROR, "injected late failure"));
        }
    }
    if let Some(marker) = &state.config.fail_substring {
        if prompt.contains(marker) {
            return Some(error_reply(StatusCode::INTERNAL_SERVER_ERROR, "injected prompt failure"));
        }
    }
    None
}

fn sha_bytes(text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

fn seed_from(text: &str) -> u64 {
    let bytes = sha_bytes(text);
    u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Deterministic fake token logprobs for a text: one value per whitespace
/// token, in [-3.0, -0.1], derived from the text hash.
fn fake_logprobs(text: &str) -> Vec<f64> {
    let bytes = sha_bytes(text);
    let count = text.split_whitespace().count().max(1);
    (0..count)
        .map(|i| {
            let b = bytes[i % bytes.len()] as f64;
            -(0.1 + 2.9 * b / 255.0)
        })
        .collect()
}

const VOCAB_SIZE: u32 = 500;

fn random_tokens(rng: &mut ChaCha20Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| format!("tok{}", rng.random_range(0..VOCAB_SIZE))).collect()
}

/// First `count` synthetic completions for a prompt. The pool is a pure
/// function of (prompt, count-prefix): regenerating a longer prefix repeats
/// the shorter one exactly, so capped responses stay consistent.
fn synthetic_pool(prompt: &str, count: usize) -> Vec<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed_from(prompt));
    let collapsed = prompt.contains("[seen]");
    let templates: Vec<Vec<String>> = if collapsed {
        let template_count = rng.random_range(2..=4usize);
        (0..template_count)
            .map(|_| {
                let len = rng.random_range(96..=100usize);
                random_tokens(&mut rng, len)
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if collapsed {
            let mut tokens = templates[i % templates.len()].clone();
            let cap = tokens.len() / 20;
            let mutations = rng.random_range(0..=cap);
            for _ in 0..mutations {
                let pos = rng.random_range(0..tokens.len());
                tokens[pos] = format!("tok{}", rng.random_range(0..VOCAB_SIZE));
            }
            out.push(tokens.join(" "));
        } else {
            let len = rng.random_range(96..=100usize);
            out.push(random_tokens(&mut rng, len).join(" "));
        }
    }
    out
}

fn completion_texts(state: &StubState, prompt: &str, n: usize, greedy: bool) -> Vec<String> {
    if greedy {
        return vec![match state.config.mode {
            StubMode::Echo => "greedy-resp".to_string(),
            StubMode::Synthetic => synthetic_pool(prompt, 1).remove(0),
        }];
    }
    let offset = {
        let mut offsets = state.offsets.lock().expect("offsets lock");
        let slot = offsets.entry(prompt.to_string()).or_insert(0);
        let offset = *slot;
        *slot += n;
        offset
    };
    match state.config.mode {
        StubMode::Echo => (offset..offset + n).map(|i| format!("resp-{i}")).collect(),
        StubMode::Synthetic => {
            synthetic_pool(prompt, offset + n).split_off(offset)
        }
    }
}

fn choice_json(index: usize, text: &str, want_logprobs: bool, chat: bool) -> Value {
    let mut choice = if chat {
        json!({
            "index": index,
            "message": { "role": "assistant", "content": text },
            "finish_reason": "stop",
        })
    } else {
        json!({
            "index": index,
            "text": text,
            "finish_reason": "stop",
        })
    };
    if want_logprobs {
        let values = fake_logprobs(text);
        choice["logprobs"] = if chat {
            let content: Vec<Value> =
                values.iter().map(|v| json!({ "logprob": v })).collect();
            json!({ "content": content })
        } else {
            json!({ "token_logprobs": values })
        };
    }
    choice
}

async fn completions(
    State(state): State<Arc<StubState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Reply {
    state.completions.fetch_add(1, Ordering::SeqCst);
    if let Some(reply) = common_entry(&state, &headers).await {
        return reply;
    }
    let prompt = match body.get("prompt").and_then(|p| p.as_str()) {
        Some(p) => p.to_string(),
        None => return error_reply(StatusCode::BAD_REQUEST, "prompt is required"),
    };
    let want_logprobs = body.get("logprobs").map(|v| !v.is_null()).unwrap_or(false);

    // Echo-scoring request: return prompt token logprobs, no generation.
    let echo = body.get("echo").and_then(|e| e.as_bool()).unwrap_or(false);
    let max_tokens = body.get("max_tokens").and_then(|m| m.as_u64()).unwrap_or(16);
    if echo && max_tokens == 0 {
        let mut values: Vec<Value> =
            fake_logprobs(&prompt).into_iter().map(|v| json!(v)).collect();
        // Real endpoints cannot score the first prompt token.
        values[0] = Value::Null;
        return (
            StatusCode::OK,
            Json(json!({
                "object": "text_completion",
                "choices": [{
                    "index": 0,
                    "text": prompt,
                    "finish_reason": "stop",
                    "logprobs": { "token_logprobs": values },
                }],
            })),
        );
    }

    if let Some(reply) = sampling_gate(&state, &prompt) {
        return reply;
    }
    let requested = body.get("n").and_then(|n| n.as_u64()).unwrap_or(1) as usize;
    let n = state.config.n_cap.map_or(requested, |cap| requested.min(cap)).max(1);
    let temperature = body.get("temperature").and_then(|t| t.as_f64()).unwrap_or(1.0);
    let texts = completion_texts(&state, &prompt, n, temperature == 0.0);
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| choice_json(i, t, want_logprobs, false))
        .collect();
    (StatusCode::OK, Json(json!({ "object": "text_completion", "choices": choices })))
}

async fn chat_completions(
    State(state): State<Arc<StubState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Reply {
    state.chat.fetch_add(1, Ordering::SeqCst);
    if let Some(reply) = common_entry(&state, &headers).await {
        return reply;
    }
    let content = body
        .get("messages")
        .and_then(|m| m.as_array())
        .and_then(|m| m.last())
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();

    // A labeling task arrives as a JSON object in the message content.
    if let Ok(task) = serde_json::from_str::<Value>(&content) {
        if let Some(ngrams) = task.get("ngrams").and_then(|n| n.as_array()) {
            let problem = task.get("problem").and_then(|p| p.as_str()).unwrap_or_default();
            let labels = label_ngrams(&state.config.labeler_mode, problem, ngrams);
            return (
                StatusCode::OK,
                Json(json!({
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": { "role": "assistant", "content": labels.to_string() },
                        "finish_reason": "stop",
                    }],
                })),
            );
        }
    }

    if let Some(reply) = sampling_gate(&state, &content) {
        return reply;
    }
    let requested = body.get("n").and_then(|n| n.as_u64()).unwrap_or(1) as usize;
    let n = state.config.n_cap.map_or(requested, |cap| requested.min(cap)).max(1);
    let temperature = body.get("temperature").and_then(|t| t.as_f64()).unwrap_or(1.0);
    let want_logprobs = body
        .get("logprobs")
        .map(|v| v.as_bool().unwrap_or(true))
        .unwrap_or(false);
    let texts = completion_texts(&state, &content, n, temperature == 0.0);
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| choice_json(i, t, want_logprobs, true))
        .collect();
    (StatusCode::OK, Json(json!({ "object": "chat.completion", "choices": choices })))
}

fn label_ngrams(mode: &LabelerMode, problem: &str, ngrams: &[Value]) -> Value {
    let problem_tokens: std::collections::HashSet<&str> = problem.split_whitespace().collect();
    let mut labels = serde_json::Map::new();
    for ngram in ngrams {
        let Some(text) = ngram.as_str() else { continue };
        let category = match mode {
            LabelerMode::Fixed(category) => category.clone(),
            LabelerMode::Garbage => "???".to_string(),
            LabelerMode::Rule => {
                let tokens: Vec<&str> = text.split_whitespace().collect();
                if !tokens.is_empty() && tokens.iter().all(|t| problem_tokens.contains(t)) {
                    "restatement".to_string()
                } else if tokens
                    .iter()
                    .any(|t| matches!(*t, "answer" | "result" | "final" | "boxed"))
                {
                    "boilerplate".to_string()
                } else {
                    "logic".to_string()
                }
            }
        };
        labels.insert(text.to_string(), Value::String(category));
    }
    Value::Object(labels)
}

async fn embeddings(
    State(state): State<Arc<StubState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Reply {
    state.embeddings.fetch_add(1, Ordering::SeqCst);
    if let Some(reply) = common_entry(&state, &headers).await {
        return reply;
    }
    let inputs: Vec<String> = match body.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => return error_reply(StatusCode::BAD_REQUEST, "input is required"),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(index, text)| {
            json!({ "index": index, "embedding": fake_embedding(text), "object": "embedding" })
        })
        .collect();
    (StatusCode::OK, Json(json!({ "object": "list", "data": data })))
}

/// Unit vector in 8 dimensions derived from the text hash. Similar texts do
/// not get similar vectors; determinism is the only goal.
fn fake_embedding(text: &str) -> Vec<f64> {
    let bytes = sha_bytes(text);
    let mut v: Vec<f64> = (0..8)
        .map(|i| {
            let raw = u16::from_be_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f64;
            raw / f64::from(u16::MAX) - 0.5
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

async fn nli(
    State(state): State<Arc<StubState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Reply {
    state.nli.fetch_add(1, Ordering::SeqCst);
    if let Some(reply) = common_entry(&state, &headers).await {
        return reply;
    }
    let premise = body.get("premise").and_then(|p| p.as_str()).unwrap_or_default();
    let hypothesis = body.get("hypothesis").and_then(|h| h.as_str()).unwrap_or_default();
    let label = match &state.config.nli_mode {
        NliMode::Fixed(label) => label.clone(),
        NliMode::FirstTokenMatch => {
            let first = |t: &str| t.split_whitespace().next().map(str::to_string);
            if first(premise).is_some() && first(premise) == first(hypothesis) {
                "entailment".to_string()
            } else {
                "neutral".to_string()
            }
        }
    };
    (StatusCode::OK, Json(json!({ "label": label })))
}

async fn stats(State(state): State<Arc<StubState>>) -> Json<StubStats> {
    Json(StubStats {
        total: state.total.load(Ordering::SeqCst),
        completions: state.completions.load(Ordering::SeqCst),
        chat: state.chat.load(Ordering::SeqCst),
        embeddings: state.embeddings.load(Ordering::SeqCst),
        nli: state.nli.load(Ordering::SeqCst),
    })
}
