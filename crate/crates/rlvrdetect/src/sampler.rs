//! Completion sampling against OpenAI-compatible endpoints, with a
//! content-addressed on-disk cache.
//!
//! Cache layout: one JSONL record per completion set at
//! `<cache_dir>/<model>/<prompt_sha256[..16]>-<fingerprint[..16]>.jsonl`.
//! The fingerprint hashes exactly the configuration fields that affect
//! endpoint output (model, api mode and its prompt template, n, temperature,
//! top_p, max_tokens, seed, logprob capture), so timeout, retry, and
//! concurrency changes reuse the cache while anything output-relevant misses
//! it. Greedy completions are separate records: their derived config (n=1,
//! temperature 0) fingerprints differently by construction.
//!
//! Partial results (fewer completions than requested, after retries) are
//! persisted to the cache with a `partial` flag but treated as misses on
//! read, so an interrupted run resumes by re-attempting only its gaps.
//!
//! The API key is read from the environment variable named in the config
//! and attached to request headers only; it never reaches the cache, record
//! files, or error messages.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{prompt_sha256, CorpusError, PromptRecord, SCHEMA_VERSION};
use crate::net::{api_key_from_env, join_url, HttpClient, HttpError};
use crate::providers::API_KEY_ENV;

/// Which OpenAI-compatible API shape to call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiMode {
    #[default]
    Completions,
    Chat,
}

impl std::fmt::Display for ApiMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ApiMode::Completions => "completions",
            ApiMode::Chat => "chat",
        })
    }
}

impl std::str::FromStr for ApiMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "completions" => Ok(ApiMode::Completions),
            "chat" => Ok(ApiMode::Chat),
            other => Err(format!("unknown api mode {other:?}, expected \"completions\" or \"chat\"")),
        }
    }
}

/// Chat-mode prompt template identifier, part of the fingerprint. There is
/// exactly one template today (the prompt as a single user message, no
/// system message); the identifier exists so a future template change
/// invalidates caches instead of silently reusing them.
const CHAT_TEMPLATE_ID: &str = "single-user-message";

/// Sampling configuration. See module docs for what enters the fingerprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub api_mode: ApiMode,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Capture per-token logprobs for completions and prompt logprobs for
    /// the logprob baselines.
    pub want_logprobs: bool,
    /// Environment variable the API key is read from.
    pub api_key_env: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            endpoint_url: "http://127.0.0.1:8000".to_string(),
            model_name: "model".to_string(),
            n_samples: 32,
            temperature: 0.7,
            top_p: 0.95,
            max_tokens: 1024,
            api_mode: ApiMode::Completions,
            request_timeout_secs: 120,
            max_retries: 3,
            concurrency_limit: 4,
            seed: None,
            want_logprobs: false,
            api_key_env: API_KEY_ENV.to_string(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n_samples == 0 {
            return Err(SamplerError::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(SamplerError::InvalidConfig("temperature must be >= 0".into()));
        }
        if !(self.top_p.is_finite() && self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplerError::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(SamplerError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(SamplerError::InvalidConfig("concurrency_limit must be at least 1".into()));
        }
        if self.endpoint_url.is_empty() {
            return Err(SamplerError::InvalidConfig("endpoint_url must be set".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the output-affecting fields only.
    pub fn fingerprint(&self) -> String {
        let material = format!(
            "model={}\nmode={}\ntemplate={}\nn={}\ntemperature={:?}\ntop_p={:?}\nmax_tokens={}\nseed={}\nlogprobs={}\n",
            self.model_name,
            self.api_mode,
            match self.api_mode {
                ApiMode::Completions => "raw-prompt",
                ApiMode::Chat => CHAT_TEMPLATE_ID,
            },
            self.n_samples,
            self.temperature,
            self.top_p,
            self.max_tokens,
            self.seed.map_or_else(|| "none".to_string(), |s| s.to_string()),
            self.want_logprobs,
        );
        let mut hasher = Sha256::new();
        hasher.update(material.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write as _;
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    /// Derived configuration for the greedy companion request.
    pub fn greedy_variant(&self) -> SamplingConfig {
        SamplingConfig {
            n_samples: 1,
            temperature: 0.0,
            // Logprob capture stays off for greedy: only the text is used.
            want_logprobs: false,
            ..self.clone()
        }
    }
}

/// One prompt's sampled completions, as persisted to cache and output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSet {
    pub schema: u32,
    pub prompt_id: String,
    pub prompt_text: String,
    pub model_name: String,
    pub config_fingerprint: String,
    pub completions: Vec<String>,
    /// Per-completion token logprobs, when requested and served.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<Vec<f64>>>,
    /// Token logprobs of the prompt itself (for PPL / min-k%), when the
    /// endpoint can echo-score prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<String>,
    /// Unix seconds when the record was created.
    pub created_at: u64,
    /// Per-completion flags: generation stopped by the max_tokens limit.
    pub truncated_flags: Vec<bool>,
    /// Fewer completions than requested (endpoint failed mid-set).
    #[serde(default)]
    pub partial: bool,
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Auth(String),
    #[error("endpoint error{}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Endpoint { status: Option<u16>, detail: String },
    #[error("could not decode endpoint response: {detail}")]
    Decode { detail: String },
    #[error("got {got} of {want} completions; partial record persisted")]
    Partial { got: usize, want: usize, set: Box<CompletionSet> },
    #[error(transparent)]
    Cache(#[from] CorpusError),
}

impl SamplerError {
    /// HTTP status carried by endpoint errors, when one was seen.
    pub fn status(&self) -> Option<u16> {
        match self {
            SamplerError::Endpoint { status, .. } => *status,
            _ => None,
        }
    }
}

impl From<HttpError> for SamplerError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Auth { .. } => SamplerError::Auth(e.to_string()),
            HttpError::Endpoint { status, .. } => {
                SamplerError::Endpoint { status, detail: e.to_string() }
            }
            HttpError::Decode { .. } => SamplerError::Decode { detail: e.to_string() },
        }
    }
}

/// Per-prompt outcome of a batch run; errors stay embedded rather than
/// aborting the batch.
#[derive(Debug)]
pub struct PromptOutcome {
    pub prompt_id: String,
    pub result: Result<CompletionSet, SamplerError>,
}

/// Sampling client: HTTP plus cache.
pub struct Sampler {
    config: SamplingConfig,
    http: HttpClient,
    cache_dir: Option<PathBuf>,
}

fn sanitize_for_path(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct FetchedBatch {
    texts: Vec<String>,
    logprobs: Vec<Vec<f64>>,
    truncated: Vec<bool>,
}

impl Sampler {
    pub fn new(config: SamplingConfig, cache_dir: Option<PathBuf>) -> Result<Self, SamplerError> {
        config.validate()?;
        let http = HttpClient::new(
            config.request_timeout_secs,
            config.max_retries,
            api_key_from_env(&config.api_key_env),
        );
        Ok(Sampler { config, http, cache_dir })
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.config
    }

    fn cache_path(&self, config: &SamplingConfig, prompt_text: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let hash = prompt_sha256(prompt_text);
        let fp = config.fingerprint();
        Some(
            dir.join(sanitize_for_path(&config.model_name))
                .join(format!("{}-{}.jsonl", &hash[..16], &fp[..16])),
        )
    }

    fn cache_lookup(&self, config: &SamplingConfig, prompt_id: &str, prompt_text: &str) -> Option<CompletionSet> {
        let path = self.cache_path(config, prompt_text)?;
        if !path.exists() {
            return None;
        }
        let records: Vec<CompletionSet> = crate::corpus::load_jsonl(&path).ok()?;
        let mut record = records.into_iter().next()?;
        if record.partial {
            // Partial records are re-attempted, not served.
            return None;
        }
        // The cache key is (model, prompt text, fingerprint); the stored id
        // may come from another corpus naming the same prompt.
        record.prompt_id = prompt_id.to_string();
        Some(record)
    }

    fn cache_store(&self, config: &SamplingConfig, set: &CompletionSet) -> Result<(), SamplerError> {
        if let Some(path) = self.cache_path(config, &set.prompt_text) {
            crate::corpus::save_jsonl(path, std::slice::from_ref(set))?;
        }
        Ok(())
    }

    fn request_batch(
        &self,
        config: &SamplingConfig,
        prompt_text: &str,
        n: usize,
    ) -> Result<FetchedBatch, SamplerError> {
        let (url, body) = match config.api_mode {
            ApiMode::Completions => {
                let mut body = serde_json::json!({
                    "model": config.model_name,
                    "prompt": prompt_text,
                    "n": n,
                    "temperature": config.temperature,
                    "top_p": config.top_p,
                    "max_tokens": config.max_tokens,
                });
                if config.want_logprobs {
                    body["logprobs"] = serde_json::json!(0);
                }
                if let Some(seed) = config.seed {
                    body["seed"] = serde_json::json!(seed);
                }
                (join_url(&config.endpoint_url, "v1/completions"), body)
            }
            ApiMode::Chat => {
                let mut body = serde_json::json!({
                    "model": config.model_name,
                    "messages": [{ "role": "user", "content": prompt_text }],
                    "n": n,
                    "temperature": config.temperature,
                    "top_p": config.top_p,
                    "max_tokens": config.max_tokens,
                });
                if config.want_logprobs {
                    body["logprobs"] = serde_json::json!(true);
                }
                if let Some(seed) = config.seed {
                    body["seed"] = serde_json::json!(seed);
                }
                (join_url(&config.endpoint_url, "v1/chat/completions"), body)
            }
        };
        let resp = self.http.post_json(&url, &body)?;
        let choices = resp
            .get("choices")
            .and_then(|c| c.as_array())
            .ok_or_else(|| SamplerError::Decode { detail: "response has no choices array".into() })?;

        let mut batch =
            FetchedBatch { texts: Vec::new(), logprobs: Vec::new(), truncated: Vec::new() };
        for choice in choices {
            let text = match config.api_mode {
                ApiMode::Completions => choice.get("text").and_then(|t| t.as_str()),
                ApiMode::Chat => choice
                    .get("message")
                    .and_then(|m| m.get("content"))
                    .and_then(|c| c.as_str()),
            }
            .ok_or_else(|| SamplerError::Decode { detail: "choice has no text".into() })?;
            batch.texts.push(text.to_string());
            batch.truncated.push(
                choice.get("finish_reason").and_then(|f| f.as_str()) == Some("length"),
            );
            if config.want_logprobs {
                batch.logprobs.push(extract_choice_logprobs(choice, config.api_mode));
            }
        }
        Ok(batch)
    }

    /// Token logprobs for the prompt itself via an echo request; `None` when
    /// the endpoint (or the chat API shape) cannot serve them.
    fn fetch_prompt_logprobs(&self, config: &SamplingConfig, prompt_text: &str) -> Option<Vec<f64>> {
        if config.api_mode != ApiMode::Completions {
            return None;
        }
        let body = serde_json::json!({
            "model": config.model_name,
            "prompt": prompt_text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let url = join_url(&config.endpoint_url, "v1/completions");
        let resp = self.http.post_json(&url, &body).ok()?;
        let token_logprobs = resp
            .get("choices")?
            .get(0)?
            .get("logprobs")?
            .get("token_logprobs")?
            .as_array()?;
        // The first prompt token often comes back null (no context to score
        // it under); skip nulls rather than failing.
        let values: Vec<f64> = token_logprobs.iter().filter_map(|v| v.as_f64()).collect();
        if values.is_empty() {
            None
        } else {
            Some(values)
        }
    }

    fn fetch_set(
        &self,
        config: &SamplingConfig,
        prompt_id: &str,
        prompt_text: &str,
    ) -> Result<CompletionSet, SamplerError> {
        let want = config.n_samples;
        let mut texts: Vec<String> = Vec::with_capacity(want);
        let mut logprobs: Vec<Vec<f64>> = Vec::new();
        let mut truncated: Vec<bool> = Vec::with_capacity(want);
        let mut failure: Option<SamplerError> = None;

        // Prefer one request with the full n; servers that cap n return
        // fewer choices and the remainder is requested in follow-up calls.
        while texts.len() < want {
            let remaining = want - texts.len();
            match self.request_batch(config, prompt_text, remaining) {
                Ok(batch) => {
                    if batch.texts.is_empty() {
                        failure = Some(SamplerError::Decode {
                            detail: "endpoint returned zero choices".into(),
                        });
                        break;
                    }
                    let take = batch.texts.len().min(remaining);
                    texts.extend(batch.texts.into_iter().take(take));
                    truncated.extend(batch.truncated.into_iter().take(take));
                    if config.want_logprobs {
                        logprobs.extend(batch.logprobs.into_iter().take(take));
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }

        let prompt_logprobs = if config.want_logprobs && !texts.is_empty() {
            self.fetch_prompt_logprobs(config, prompt_text)
        } else {
            None
        };

        let got = texts.len();
        let set = CompletionSet {
            schema: SCHEMA_VERSION,
            prompt_id: prompt_id.to_string(),
            prompt_text: prompt_text.to_string(),
            model_name: config.model_name.clone(),
            config_fingerprint: config.fingerprint(),
            completions: texts,
            logprobs: if config.want_logprobs && got > 0 { Some(logprobs) } else { None },
            prompt_logprobs,
            greedy: None,
            created_at: now_unix(),
            truncated_flags: truncated,
            partial: got < want,
        };

        match failure {
            None => {
                self.cache_store(config, &set)?;
                Ok(set)
            }
            Some(error) if got == 0 => Err(error),
            Some(_) => {
                self.cache_store(config, &set)?;
                Err(SamplerError::Partial { got, want, set: Box::new(set) })
            }
        }
    }

    /// Samples `n_samples` completions for one prompt, serving from cache
    /// when an identical-fingerprint record exists.
    pub fn sample_completions(
        &self,
        prompt_id: &str,
        prompt_text: &str,
    ) -> Result<CompletionSet, SamplerError> {
        if let Some(hit) = self.cache_lookup(&self.config, prompt_id, prompt_text) {
            return Ok(hit);
        }
        self.fetch_set(&self.config, prompt_id, prompt_text)
    }

    /// Single greedy (temperature 0) completion, cached separately.
    pub fn greedy_completion(
        &self,
        prompt_id: &str,
        prompt_text: &str,
    ) -> Result<String, SamplerError> {
        let config = self.config.greedy_variant();
        if let Some(hit) = self.cache_lookup(&config, prompt_id, prompt_text) {
            if let Some(text) = hit.completions.into_iter().next() {
                return Ok(text);
            }
        }
        let mut set = self.fetch_set(&config, prompt_id, prompt_text)?;
        set.greedy = Some(set.completions[0].clone());
        self.cache_store(&config, &set)?;
        Ok(set.completions.into_iter().next().expect("non-partial set has completions"))
    }

    /// Samples every prompt with at most `concurrency_limit` prompts in
    /// flight. Output order equals corpus order; per-prompt failures are
    /// embedded, never fatal.
    pub fn batch_sample(
        &self,
        prompts: &[PromptRecord],
        include_greedy: bool,
    ) -> Vec<PromptOutcome> {
        if prompts.is_empty() {
            return Vec::new();
        }
        let workers = self.config.concurrency_limit.min(prompts.len()).max(1);
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, PromptOutcome)>();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= prompts.len() {
                        break;
                    }
                    let prompt = &prompts[idx];
                    let mut result = self.sample_completions(&prompt.id, &prompt.prompt);
                    if include_greedy {
                        if let Ok(set) = &mut result {
                            match self.greedy_completion(&prompt.id, &prompt.prompt) {
                                Ok(text) => set.greedy = Some(text),
                                Err(e) => {
                                    result = Err(e);
                                }
                            }
                        }
                    }
                    let outcome = PromptOutcome { prompt_id: prompt.id.clone(), result };
                    let _ = tx.send((idx, outcome));
                });
            }
            drop(tx);

            let mut slots: Vec<Option<PromptOutcome>> =
                (0..prompts.len()).map(|_| None).collect();
            for (idx, outcome) in rx {
                slots[idx] = Some(outcome);
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(idx, slot)| {
                    slot.unwrap_or_else(|| PromptOutcome {
                        prompt_id: prompts[idx].id.clone(),
                        result: Err(SamplerError::Endpoint {
                            status: None,
                            detail: "worker dropped the prompt".into(),
                        }),
                    })
                })
                .collect()
        })
    }
}

fn extract_choice_logprobs(choice: &serde_json::Value, mode: ApiMode) -> Vec<f64> {
    match mode {
        ApiMode::Completions => choice
            .get("logprobs")
            .and_then(|l| l.get("token_logprobs"))
            .and_then(|t| t.as_array())
            .map(|arr| arr.iter().filter_map(|v| v.as_f64()).collect())
            .unwrap_or_default(),
        ApiMode::Chat => choice
            .get("logprobs")
            .and_then(|l| l.get("content"))
            .and_then(|c| c.as_array())
            .map(|arr| {
                arr.iter().filter_map(|item| item.get("logprob").and_then(|v| v.as_f64())).collect()
            })
            .unwrap_or_default(),
    }
}

/// Cache path helper used by cache-inspection tooling and tests.
pub fn cache_record_path(
    cache_dir: &Path,
    config: &SamplingConfig,
    prompt_text: &str,
) -> PathBuf {
    let hash = prompt_sha256(prompt_text);
    let fp = config.fingerprint();
    cache_dir
        .join(sanitize_for_path(&config.model_name))
        .join(format!("{}-{}.jsonl", &hash[..16], &fp[..16]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_sensitivity() {
        let base = SamplingConfig::default();
        let fp = base.fingerprint();
        assert_eq!(fp.len(), 64);
        assert_eq!(fp, SamplingConfig::default().fingerprint());

        let mut changed = base.clone();
        changed.temperature = 0.8;
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.top_p = 0.9;
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.max_tokens = 512;
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.model_name = "other".into();
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.n_samples = 16;
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.seed = Some(7);
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.api_mode = ApiMode::Chat;
        assert_ne!(fp, changed.fingerprint());
        changed = base.clone();
        changed.want_logprobs = true;
        assert_ne!(fp, changed.fingerprint());

        // Operational knobs must not invalidate caches.
        changed = base.clone();
        changed.request_timeout_secs = 9;
        changed.max_retries = 9;
        changed.concurrency_limit = 9;
        changed.endpoint_url = "http://elsewhere:1".into();
        changed.api_key_env = "OTHER_KEY".into();
        assert_eq!(fp, changed.fingerprint());
    }

    #[test]
    fn greedy_variant_differs_only_in_sampling() {
        let base = SamplingConfig::default();
        let greedy = base.greedy_variant();
        assert_eq!(greedy.n_samples, 1);
        assert_eq!(greedy.temperature, 0.0);
        assert_ne!(base.fingerprint(), greedy.fingerprint());
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        let bad = SamplingConfig { n_samples: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig { top_p: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig { top_p: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig { temperature: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SamplingConfig { concurrency_limit: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn model_names_are_path_safe() {
        assert_eq!(sanitize_for_path("org/model:v1.2"), "org_model_v1.2");
        assert_eq!(sanitize_for_path("plain-name_ok"), "plain-name_ok");
    }

    #[test]
    fn completion_set_round_trips_via_json() {
        let set = CompletionSet {
            schema: SCHEMA_VERSION,
            prompt_id: "p1".into(),
            prompt_text: "text".into(),
            model_name: "m".into(),
            config_fingerprint: "fp".into(),
            completions: vec!["a".into(), "b".into()],
            logprobs: Some(vec![vec![-0.5], vec![-1.0, -2.0]]),
            prompt_logprobs: Some(vec![-0.25]),
            greedy: Some("g".into()),
            created_at: 123,
            truncated_flags: vec![false, true],
            partial: false,
        };
        let json = serde_json::to_string(&set).unwrap();
        let back: CompletionSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        assert!(json.contains("\"schema\":1"));
    }
}
