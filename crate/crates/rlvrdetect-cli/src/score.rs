//! `rlvrdetect score`: detection scores from completion sets.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rlvrdetect::corpus::{load_jsonl, save_jsonl, ScoreRecord};
use rlvrdetect::detector::{
    cdd_score, min_k_percent_score, min_knn_from_matrix, ppl_score, DetectionScore, Method,
    Orientation,
};
use rlvrdetect::distance::{pairwise_distance_matrix_with, DistanceMatrix, DistanceOptions};
use rlvrdetect::sampler::CompletionSet;

use crate::config::{parse_sweep, suffixed_path, ConfigFlags, RunConfig};
use crate::manifest::write_manifest;

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// completions.jsonl produced by `sample` (or `synth`).
    pub completions: PathBuf,
    /// Output scores file.
    #[arg(long, default_value = "scores.jsonl")]
    pub out: PathBuf,
    /// Methods to score: min-knn | cdd | ppl | min-k-percent.
    #[arg(long, value_delimiter = ',', default_value = "min-knn")]
    pub method: Vec<Method>,
    /// Score once per k: k=2,4,8,10,16 (reuses one distance matrix per
    /// prompt).
    #[arg(long, value_name = "k=V1,V2")]
    pub sweep: Option<String>,
    #[command(flatten)]
    pub config: ConfigFlags,
}

/// Validates method requirements against every set before any scoring work.
fn validate_sets(sets: &[CompletionSet], methods: &[Method], max_k: usize) -> Result<()> {
    for set in sets {
        let m = set.completions.len();
        for method in methods {
            match method {
                Method::MinKnn => {
                    if m < 2 {
                        bail!(
                            "prompt {}: min-knn needs at least 2 completions, found {m}",
                            set.prompt_id
                        );
                    }
                    if max_k > m {
                        bail!("prompt {}: k {max_k} exceeds m {m}", set.prompt_id);
                    }
                }
                Method::Cdd => {
                    if set.greedy.is_none() {
                        bail!(
                            "prompt {}: cdd needs a greedy completion (re-run sample with --greedy)",
                            set.prompt_id
                        );
                    }
                    if m == 0 {
                        bail!("prompt {}: cdd needs sampled completions", set.prompt_id);
                    }
                }
                Method::Ppl | Method::MinKPercent => {
                    if set.prompt_logprobs.as_ref().map_or(true, |l| l.is_empty()) {
                        bail!(
                            "prompt {}: {} needs prompt logprobs (re-run sample with --logprobs \
                             against an endpoint that can echo-score prompts)",
                            set.prompt_id,
                            method
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn run(args: &ScoreArgs) -> Result<u8> {
    let run_config = RunConfig::resolve(&args.config)?;
    let detector = &run_config.detector;

    let ks: Vec<usize> = match args.sweep.as_deref() {
        None => vec![detector.k],
        Some(raw) => {
            let spec = parse_sweep(raw, &["k"])?;
            spec.values
                .iter()
                .map(|v| v.parse::<usize>().context("bad --sweep k value"))
                .collect::<Result<_>>()?
        }
    };
    if ks.contains(&0) {
        bail!("k must be at least 1");
    }

    let all_sets: Vec<CompletionSet> = load_jsonl(&args.completions)?;
    let (sets, partial): (Vec<_>, Vec<_>) = all_sets.into_iter().partition(|s| !s.partial);
    for set in &partial {
        eprintln!(
            "prompt {}: skipping partial set ({} completions)",
            set.prompt_id,
            set.completions.len()
        );
    }
    if sets.is_empty() {
        bail!("no complete completion sets in {}", args.completions.display());
    }

    let max_k = *ks.iter().max().expect("ks non-empty");
    validate_sets(&sets, &args.method, max_k)?;

    let outputs: Vec<PathBuf> = if args.sweep.is_some() {
        ks.iter().map(|k| suffixed_path(&args.out, &format!("-k{k}"))).collect()
    } else {
        vec![args.out.clone()]
    };
    write_manifest(
        &args.out,
        "score",
        serde_json::json!({
            "run": run_config,
            "methods": args.method.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
            "k_values": ks,
            "sweep": args.sweep,
        }),
        &[&args.completions],
        &outputs,
    )?;

    // One distance matrix per prompt feeds every k in the sweep.
    let matrices: Option<Vec<DistanceMatrix>> = if args.method.contains(&Method::MinKnn) {
        let opts = DistanceOptions {
            unit_mode: detector.unit_mode,
            max_units: detector.max_units,
            banded: true,
        };
        Some(sets.iter().map(|s| pairwise_distance_matrix_with(&s.completions, &opts)).collect())
    } else {
        None
    };

    for (&k, out_path) in ks.iter().zip(&outputs) {
        let mut records: Vec<ScoreRecord> = Vec::new();
        for (index, set) in sets.iter().enumerate() {
            for method in &args.method {
                let score = match method {
                    Method::MinKnn => {
                        let matrix = &matrices.as_ref().expect("matrices computed")[index];
                        let value = min_knn_from_matrix(matrix, k)?;
                        DetectionScore {
                            prompt_id: set.prompt_id.clone(),
                            method: Method::MinKnn,
                            score: value,
                            orientation: Orientation::LowerMeansMember,
                            m_used: set.completions.len(),
                            k_used: Some(k),
                        }
                    }
                    Method::Cdd => {
                        let greedy = set.greedy.as_deref().expect("validated above");
                        cdd_score(&set.prompt_id, greedy, &set.completions, detector)?
                    }
                    Method::Ppl => {
                        let logprobs = set.prompt_logprobs.as_deref().expect("validated above");
                        ppl_score(&set.prompt_id, logprobs)?
                    }
                    Method::MinKPercent => {
                        let logprobs = set.prompt_logprobs.as_deref().expect("validated above");
                        min_k_percent_score(&set.prompt_id, logprobs, detector.min_k_fraction)?
                    }
                };
                records.push(ScoreRecord::from_score(score, &set.config_fingerprint));
            }
        }
        save_jsonl(out_path, &records)?;
        println!("wrote {} scores to {}", records.len(), out_path.display());
    }

    Ok(if partial.is_empty() { 0 } else { 1 })
}
