//! Effective run configuration: defaults, then an optional key=value config
//! file, then command-line flags, in that precedence order.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rlvrdetect::detector::DetectorConfig;
use rlvrdetect::distance::UnitMode;
use rlvrdetect::sampler::{ApiMode, SamplingConfig};
use serde::Serialize;

/// Flags shared by every subcommand that talks to endpoints or scores text.
/// Every field is optional; unset flags leave the config-file or default
/// value in place.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Plain key=value config file (one pair per line, # comments).
    #[arg(long, value_name = "FILE", global = true)]
    pub config: Option<PathBuf>,
    /// Base URL of the completion endpoint.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model name sent with every request.
    #[arg(long)]
    pub model: Option<String>,
    /// Completions sampled per prompt.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// How many smallest nearest-neighbor distances min-knn averages.
    #[arg(long)]
    pub k: Option<usize>,
    /// Distance unit: token | char.
    #[arg(long)]
    pub unit: Option<UnitMode>,
    /// Seed for endpoint sampling and all seeded draws in the pipeline.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Completion cache directory (shared across runs).
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Prompts sampled in parallel.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// API shape: completions | chat.
    #[arg(long)]
    pub api_mode: Option<ApiMode>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Embedding endpoint for embedding diversity (optional).
    #[arg(long, value_name = "URL")]
    pub embedding_endpoint: Option<String>,
    /// NLI endpoint for NLI diversity (optional).
    #[arg(long, value_name = "URL")]
    pub nli_endpoint: Option<String>,
    /// Chat endpoint used to label rigid n-grams (optional).
    #[arg(long, value_name = "URL")]
    pub labeler_endpoint: Option<String>,
    /// Model name for the labeler endpoint.
    #[arg(long)]
    pub labeler_model: Option<String>,
}

/// Merged view of everything a command needs; echoed verbatim into the run
/// manifest. Holds the name of the API key variable, never the key itself.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub sampling: SamplingConfig,
    pub detector: DetectorConfig,
    pub cache_dir: PathBuf,
    /// Seed for pipeline-internal draws (control subsets, NLI pair caps).
    pub seed: u64,
    pub embedding_endpoint: Option<String>,
    pub nli_endpoint: Option<String>,
    pub labeler_endpoint: Option<String>,
    pub labeler_model: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampling: SamplingConfig::default(),
            detector: DetectorConfig::default(),
            cache_dir: PathBuf::from("cache"),
            seed: 17,
            embedding_endpoint: None,
            nli_endpoint: None,
            labeler_endpoint: None,
            labeler_model: None,
        }
    }
}

fn parse_as<T>(key: &str, value: &str, path: &Path, line: usize) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| {
        anyhow::anyhow!("{}:{line}: bad value {value:?} for {key}: {e}", path.display())
    })
}

impl RunConfig {
    /// Defaults, then the config file (if given), then flags.
    pub fn resolve(flags: &ConfigFlags) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &flags.config {
            config.apply_file(path)?;
        }
        config.apply_flags(flags);
        config.validate()?;
        Ok(config)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                bail!("{}:{line}: expected key = value, got {trimmed:?}", path.display());
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "endpoint" => self.sampling.endpoint_url = value.to_string(),
                "model" => self.sampling.model_name = value.to_string(),
                "n" => self.sampling.n_samples = parse_as(key, value, path, line)?,
                "temperature" => self.sampling.temperature = parse_as(key, value, path, line)?,
                "top_p" => self.sampling.top_p = parse_as(key, value, path, line)?,
                "max_tokens" => self.sampling.max_tokens = parse_as(key, value, path, line)?,
                "api_mode" => self.sampling.api_mode = parse_as(key, value, path, line)?,
                "timeout_secs" => {
                    self.sampling.request_timeout_secs = parse_as(key, value, path, line)?
                }
                "max_retries" => self.sampling.max_retries = parse_as(key, value, path, line)?,
                "concurrency" => {
                    self.sampling.concurrency_limit = parse_as(key, value, path, line)?
                }
                "logprobs" => self.sampling.want_logprobs = parse_as(key, value, path, line)?,
                "api_key_env" => self.sampling.api_key_env = value.to_string(),
                "seed" => {
                    let seed: u64 = parse_as(key, value, path, line)?;
                    self.seed = seed;
                    self.sampling.seed = Some(seed);
                }
                "cache_dir" => self.cache_dir = PathBuf::from(value),
                "k" => self.detector.k = parse_as(key, value, path, line)?,
                "unit" => self.detector.unit_mode = parse_as(key, value, path, line)?,
                "max_units" => self.detector.max_units = parse_as(key, value, path, line)?,
                "cdd_alpha" => self.detector.cdd_alpha = parse_as(key, value, path, line)?,
                "min_k_fraction" => {
                    self.detector.min_k_fraction = parse_as(key, value, path, line)?
                }
                "embedding_endpoint" => self.embedding_endpoint = Some(value.to_string()),
                "nli_endpoint" => self.nli_endpoint = Some(value.to_string()),
                "labeler_endpoint" => self.labeler_endpoint = Some(value.to_string()),
                "labeler_model" => self.labeler_model = Some(value.to_string()),
                other => bail!("{}:{line}: unknown config key {other:?}", path.display()),
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &ConfigFlags) {
        if let Some(v) = &flags.endpoint {
            self.sampling.endpoint_url = v.clone();
        }
        if let Some(v) = &flags.model {
            self.sampling.model_name = v.clone();
        }
        if let Some(v) = flags.n {
            self.sampling.n_samples = v;
        }
        if let Some(v) = flags.temperature {
            self.sampling.temperature = v;
        }
        if let Some(v) = flags.top_p {
            self.sampling.top_p = v;
        }
        if let Some(v) = flags.max_tokens {
            self.sampling.max_tokens = v;
        }
        if let Some(v) = flags.api_mode {
            self.sampling.api_mode = v;
        }
        if let Some(v) = flags.timeout_secs {
            self.sampling.request_timeout_secs = v;
        }
        if let Some(v) = flags.max_retries {
            self.sampling.max_retries = v;
        }
        if let Some(v) = flags.concurrency {
            self.sampling.concurrency_limit = v;
        }
        if let Some(v) = flags.seed {
            self.seed = v;
            self.sampling.seed = Some(v);
        }
        if let Some(v) = &flags.cache_dir {
            self.cache_dir = v.clone();
        }
        if let Some(v) = flags.k {
            self.detector.k = v;
        }
        if let Some(v) = flags.unit {
            self.detector.unit_mode = v;
        }
        if let Some(v) = &flags.embedding_endpoint {
            self.embedding_endpoint = Some(v.clone());
        }
        if let Some(v) = &flags.nli_endpoint {
            self.nli_endpoint = Some(v.clone());
        }
        if let Some(v) = &flags.labeler_endpoint {
            self.labeler_endpoint = Some(v.clone());
        }
        if let Some(v) = &flags.labeler_model {
            self.labeler_model = Some(v.clone());
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, url) in [
            ("endpoint", Some(&self.sampling.endpoint_url)),
            ("embedding_endpoint", self.embedding_endpoint.as_ref()),
            ("nli_endpoint", self.nli_endpoint.as_ref()),
            ("labeler_endpoint", self.labeler_endpoint.as_ref()),
        ] {
            if let Some(url) = url {
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    bail!("{name} URL {url:?} must start with http:// or https://");
                }
            }
        }
        self.sampling.validate()?;
        self.detector.validate()?;
        Ok(())
    }

    /// Provider configuration for an optional auxiliary endpoint.
    pub fn provider(
        &self,
        endpoint: &str,
        model: Option<&String>,
    ) -> rlvrdetect::providers::ProviderConfig {
        rlvrdetect::providers::ProviderConfig {
            endpoint_url: endpoint.to_string(),
            model: model.cloned(),
            timeout_secs: self.sampling.request_timeout_secs,
            max_retries: self.sampling.max_retries,
            api_key_env: self.sampling.api_key_env.clone(),
        }
    }
}

/// `base.jsonl` + suffix `-k4` -> `base-k4.jsonl`.
pub fn suffixed_path(base: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    base.with_file_name(name)
}

/// Parsed `--sweep key=v1,v2,...` specification.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_sweep(raw: &str, allowed: &[&str]) -> Result<SweepSpec> {
    let Some((key, values)) = raw.split_once('=') else {
        bail!("--sweep expects key=v1,v2,... , got {raw:?}");
    };
    let key = key.trim();
    if !allowed.contains(&key) {
        bail!("--sweep key {key:?} not supported here (expected one of {allowed:?})");
    }
    let values: Vec<String> =
        values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("--sweep {key} has no values");
    }
    Ok(SweepSpec { key: key.to_string(), values })
}
