//! Shared HTTP plumbing for the sampler and provider clients.
//!
//! One policy everywhere: POST JSON, retry transport failures and
//! 408/429/5xx with exponential backoff plus jitter, fail fast on auth
//! rejections and other client errors. HTTP statuses arrive as responses
//! rather than errors, so the retry decision is explicit.

use std::time::Duration;

use rand::Rng;
use thiserror::Error;

const RETRY_BASE_MS: u64 = 250;
const RETRY_CAP_MS: u64 = 4_000;

#[derive(Debug, Error)]
pub(crate) enum HttpError {
    #[error("{url}: authentication rejected (HTTP {status}); check the API key environment variable")]
    Auth { url: String, status: u16 },
    #[error("{url}: request failed after {attempts} attempt(s): {detail}")]
    Endpoint { url: String, attempts: u32, status: Option<u16>, detail: String },
    #[error("{url}: could not decode response: {detail}")]
    Decode { url: String, detail: String },
}

pub(crate) struct HttpClient {
    agent: ureq::Agent,
    max_retries: u32,
    api_key: Option<String>,
}

fn truncate_detail(body: &str) -> String {
    let trimmed = body.trim();
    if trimmed.len() <= 300 {
        trimmed.to_string()
    } else {
        let mut end = 300;
        while !trimmed.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &trimmed[..end])
    }
}

impl HttpClient {
    pub(crate) fn new(timeout_secs: u64, max_retries: u32, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient { agent, max_retries, api_key }
    }

    /// POSTs `body` to `url` and returns the decoded JSON response.
    pub(crate) fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, HttpError> {
        let attempts = self.max_retries + 1;
        let mut last_detail = String::new();
        let mut last_status: Option<u16> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let exp = RETRY_BASE_MS.saturating_mul(1 << (attempt - 1).min(8));
                let base = exp.min(RETRY_CAP_MS);
                let jitter = rand::rng().random_range(0..=RETRY_BASE_MS / 2);
                std::thread::sleep(Duration::from_millis(base + jitter));
            }

            let mut request = self.agent.post(url);
            if let Some(key) = &self.api_key {
                request = request.header("authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body) {
                Err(e) => {
                    last_detail = format!("transport error: {e}");
                    last_status = None;
                    continue;
                }
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json().map_err(|e| HttpError::Decode {
                            url: url.to_string(),
                            detail: e.to_string(),
                        });
                    }
                    let body_text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 401 || status == 403 {
                        return Err(HttpError::Auth { url: url.to_string(), status });
                    }
                    let retryable = status == 408 || status == 429 || status >= 500;
                    last_detail = format!("HTTP {status}: {}", truncate_detail(&body_text));
                    last_status = Some(status);
                    if !retryable {
                        return Err(HttpError::Endpoint {
                            url: url.to_string(),
                            attempts: attempt + 1,
                            status: last_status,
                            detail: last_detail,
                        });
                    }
                }
            }
        }
        Err(HttpError::Endpoint { url: url.to_string(), attempts, status: last_status, detail: last_detail })
    }
}

/// Joins a base endpoint with an API path, tolerating trailing slashes.
pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// Reads an API key from the named environment variable. Empty values count
/// as unset. The key is only ever attached to request headers; it must never
/// be written to caches, manifests, or logs.
pub(crate) fn api_key_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.is_empty())
}
