//! Clients for the optional analysis providers: text embeddings, NLI
//! judgments, and n-gram labeling.
//!
//! Each provider is also expressed as a trait so analyses can run against
//! in-process fakes in tests. All network providers speak JSON over POST and
//! share the retry policy in [`crate::net`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{api_key_from_env, join_url, HttpClient, HttpError};

/// Default environment variable holding the API key for all endpoints.
pub const API_KEY_ENV: &str = "RLVRDETECT_API_KEY";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("{0}")]
    Http(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("{url}: response missing expected field {field:?}")]
    MissingField { url: String, field: &'static str },
    #[error("{url}: {detail}")]
    BadResponse { url: String, detail: String },
}

impl From<HttpError> for ProviderError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Auth { .. } => ProviderError::Auth(e.to_string()),
            other => ProviderError::Http(other.to_string()),
        }
    }
}

/// Connection settings for one provider endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    /// Model name passed through to the provider, when it wants one.
    #[serde(default)]
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Name of the environment variable the API key is read from.
    pub api_key_env: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint_url: "http://127.0.0.1:8080".to_string(),
            model: None,
            timeout_secs: 60,
            max_retries: 3,
            api_key_env: API_KEY_ENV.to_string(),
        }
    }
}

impl ProviderConfig {
    fn client(&self) -> HttpClient {
        HttpClient::new(self.timeout_secs, self.max_retries, api_key_from_env(&self.api_key_env))
    }
}

/// Text embedding provider (`POST {endpoint}/v1/embeddings`).
pub struct EmbeddingClient {
    http: HttpClient,
    url: String,
    model: Option<String>,
}

impl EmbeddingClient {
    pub fn new(config: &ProviderConfig) -> Self {
        EmbeddingClient {
            http: config.client(),
            url: join_url(&config.endpoint_url, "v1/embeddings"),
            model: config.model.clone(),
        }
    }

    /// Embeds `inputs` in order. The response's `index` fields are honored,
    /// so providers that reorder batches still line up.
    pub fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut body = serde_json::json!({ "input": inputs });
        if let Some(model) = &self.model {
            body["model"] = serde_json::json!(model);
        }
        let resp = self.http.post_json(&self.url, &body)?;
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or(ProviderError::MissingField { url: self.url.clone(), field: "data" })?;
        if data.len() != inputs.len() {
            return Err(ProviderError::BadResponse {
                url: self.url.clone(),
                detail: format!("expected {} embeddings, got {}", inputs.len(), data.len()),
            });
        }
        let mut out = vec![Vec::new(); inputs.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(|i| i.as_u64()).map_or(pos, |i| i as usize);
            if index >= inputs.len() {
                return Err(ProviderError::BadResponse {
                    url: self.url.clone(),
                    detail: format!("embedding index {index} out of range"),
                });
            }
            let vector = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or(ProviderError::MissingField { url: self.url.clone(), field: "embedding" })?
                .iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN))
                .collect::<Vec<f64>>();
            if vector.iter().any(|v| v.is_nan()) {
                return Err(ProviderError::BadResponse {
                    url: self.url.clone(),
                    detail: "embedding contains non-numeric values".to_string(),
                });
            }
            out[index] = vector;
        }
        Ok(out)
    }
}

/// Three-way NLI verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl std::str::FromStr for NliLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(NliLabel::Entailment),
            "contradiction" => Ok(NliLabel::Contradiction),
            "neutral" => Ok(NliLabel::Neutral),
            other => Err(format!("unknown NLI label {other:?}")),
        }
    }
}

/// Anything that can judge a premise/hypothesis pair.
pub trait NliJudge {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ProviderError>;
}

/// NLI provider (`POST {endpoint}/v1/nli` with `{premise, hypothesis}`).
pub struct NliClient {
    http: HttpClient,
    url: String,
}

impl NliClient {
    pub fn new(config: &ProviderConfig) -> Self {
        NliClient { http: config.client(), url: join_url(&config.endpoint_url, "v1/nli") }
    }
}

impl NliJudge for NliClient {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ProviderError> {
        let body = serde_json::json!({ "premise": premise, "hypothesis": hypothesis });
        let resp = self.http.post_json(&self.url, &body)?;
        let label = resp
            .get("label")
            .and_then(|l| l.as_str())
            .ok_or(ProviderError::MissingField { url: self.url.clone(), field: "label" })?;
        label.parse().map_err(|detail| ProviderError::BadResponse { url: self.url.clone(), detail })
    }
}

/// Anything that can assign category strings to rigid n-grams.
pub trait NgramLabeler {
    /// Returns raw category strings keyed by n-gram text. Missing keys and
    /// unknown categories are handled by the caller, not here.
    fn label(
        &self,
        problem: &str,
        annotated_answer: &str,
        ngrams: &[String],
    ) -> Result<BTreeMap<String, String>, ProviderError>;
}

/// Labeling provider that sends the categorization task to a chat-completions
/// model and parses the JSON object it returns.
pub struct LabelerClient {
    http: HttpClient,
    url: String,
    model: Option<String>,
}

impl LabelerClient {
    pub fn new(config: &ProviderConfig) -> Self {
        LabelerClient {
            http: config.client(),
            url: join_url(&config.endpoint_url, "v1/chat/completions"),
            model: config.model.clone(),
        }
    }
}

/// Strips a Markdown code fence if the model wrapped its JSON in one.
fn strip_code_fence(content: &str) -> &str {
    let trimmed = content.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    inner.trim()
}

impl NgramLabeler for LabelerClient {
    fn label(
        &self,
        problem: &str,
        annotated_answer: &str,
        ngrams: &[String],
    ) -> Result<BTreeMap<String, String>, ProviderError> {
        let task = serde_json::json!({
            "task": crate::rigidity::LABELING_TASK,
            "problem": problem,
            "sample_answer": annotated_answer,
            "ngrams": ngrams,
        });
        let mut body = serde_json::json!({
            "messages": [{ "role": "user", "content": task.to_string() }],
            "temperature": 0.0,
        });
        if let Some(model) = &self.model {
            body["model"] = serde_json::json!(model);
        }
        let resp = self.http.post_json(&self.url, &body)?;
        let content = resp
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .ok_or(ProviderError::MissingField { url: self.url.clone(), field: "choices[0].message.content" })?;
        let parsed: serde_json::Value = serde_json::from_str(strip_code_fence(content))
            .map_err(|e| ProviderError::BadResponse {
                url: self.url.clone(),
                detail: format!("labeler did not return JSON: {e}"),
            })?;
        let object = parsed.as_object().ok_or(ProviderError::BadResponse {
            url: self.url.clone(),
            detail: "labeler response is not a JSON object".to_string(),
        })?;
        let mut out = BTreeMap::new();
        for (key, value) in object {
            if let Some(category) = value.as_str() {
                out.insert(key.clone(), category.to_string());
            }
        }
        Ok(out)
    }
}
