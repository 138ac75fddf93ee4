//! `rlvrdetect analyze`: diversity or rigidity profiles from completion
//! sets. Provider-backed metrics (NLI, embeddings, n-gram labeling) switch
//! on when their endpoints are configured and are skipped with a notice
//! when not; provider failures degrade per prompt instead of aborting.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use rlvrdetect::corpus::{load_jsonl, save_jsonl, ProfileRecord};
use rlvrdetect::diversity::{diversity_profile, ProfileExtras, VocabSource};
use rlvrdetect::providers::{EmbeddingClient, LabelerClient, NliClient, NliJudge};
use rlvrdetect::rigidity::{
    co_occurrence_csv, rigidity_profile, RigidityOptions, RigidityThreshold,
};
use rlvrdetect::sampler::CompletionSet;

use crate::config::{ConfigFlags, RunConfig};
use crate::manifest::write_manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeKind {
    Diversity,
    Rigidity,
}

impl std::str::FromStr for AnalyzeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diversity" => Ok(AnalyzeKind::Diversity),
            "rigidity" => Ok(AnalyzeKind::Rigidity),
            other => Err(format!("unknown analysis kind {other:?}, expected diversity or rigidity")),
        }
    }
}

impl std::fmt::Display for AnalyzeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnalyzeKind::Diversity => "diversity",
            AnalyzeKind::Rigidity => "rigidity",
        })
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// completions.jsonl produced by `sample` (or `synth`).
    pub completions: PathBuf,
    /// What to profile: diversity | rigidity.
    pub kind: AnalyzeKind,
    /// Output profiles file.
    #[arg(long, default_value = "profiles.jsonl")]
    pub out: PathBuf,
    /// Also write one co-occurrence CSV per prompt (rigidity only).
    #[arg(long)]
    pub heatmap: bool,
    /// N-gram order for rigidity analysis.
    #[arg(long, default_value_t = 3)]
    pub ngram_order: usize,
    /// Rigid-n-gram support as an absolute completion count.
    #[arg(long, value_name = "COUNT", conflicts_with = "min_fraction")]
    pub min_count: Option<usize>,
    /// Rigid-n-gram support as a fraction of completions (default 0.5).
    #[arg(long, value_name = "FRACTION")]
    pub min_fraction: Option<f64>,
    /// Pair budget for NLI diversity.
    #[arg(long, default_value_t = 64)]
    pub max_pairs: usize,
    #[command(flatten)]
    pub config: ConfigFlags,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn run(args: &AnalyzeArgs) -> Result<u8> {
    let run_config = RunConfig::resolve(&args.config)?;
    if args.heatmap && args.kind != AnalyzeKind::Rigidity {
        bail!("--heatmap applies to rigidity analysis only");
    }

    let sets: Vec<CompletionSet> = load_jsonl(&args.completions)?;
    if sets.is_empty() {
        bail!("no completion sets in {}", args.completions.display());
    }

    write_manifest(
        &args.out,
        "analyze",
        serde_json::json!({
            "run": run_config,
            "kind": args.kind.to_string(),
            "heatmap": args.heatmap,
            "ngram_order": args.ngram_order,
            "min_count": args.min_count,
            "min_fraction": args.min_fraction,
            "max_pairs": args.max_pairs,
        }),
        &[&args.completions],
        std::slice::from_ref(&args.out),
    )?;

    let mut failed = 0usize;
    let records = match args.kind {
        AnalyzeKind::Diversity => diversity_records(args, &run_config, &sets, &mut failed)?,
        AnalyzeKind::Rigidity => rigidity_records(args, &run_config, &sets, &mut failed)?,
    };

    save_jsonl(&args.out, &records)?;
    println!("wrote {} profiles to {}", records.len(), args.out.display());
    if failed > 0 {
        eprintln!("{failed} prompt(s) degraded or failed; see messages above");
        return Ok(1);
    }
    Ok(0)
}

fn diversity_records(
    args: &AnalyzeArgs,
    run_config: &RunConfig,
    sets: &[CompletionSet],
    failed: &mut usize,
) -> Result<Vec<ProfileRecord>> {
    let embed_client = run_config
        .embedding_endpoint
        .as_ref()
        .map(|url| (EmbeddingClient::new(&run_config.provider(url, None)), url.clone()));
    let nli_client = run_config
        .nli_endpoint
        .as_ref()
        .map(|url| (NliClient::new(&run_config.provider(url, None)), url.clone()));
    if embed_client.is_none() {
        println!("no embedding endpoint configured; embedding diversity will be absent");
    }
    if nli_client.is_none() {
        println!("no NLI endpoint configured; NLI diversity will be absent");
    }

    let vocab = VocabSource::CompletionPool;
    let mut records = Vec::with_capacity(sets.len());
    for set in sets {
        let mut extras = ProfileExtras {
            max_pairs: args.max_pairs,
            seed: run_config.seed,
            ..Default::default()
        };
        let embeddings = match &embed_client {
            Some((client, url)) => match client.embed(&set.completions) {
                Ok(vectors) => Some((vectors, url.clone())),
                Err(e) => {
                    eprintln!("prompt {}: embedding provider failed: {e}", set.prompt_id);
                    *failed += 1;
                    None
                }
            },
            None => None,
        };
        if let Some((vectors, url)) = &embeddings {
            extras.embeddings = Some((vectors, format!("embeddings:{url}")));
        }
        if let Some((client, url)) = &nli_client {
            extras.nli = Some((client as &dyn NliJudge, format!("nli:{url}")));
        }

        let profile = diversity_profile(&set.prompt_id, &set.completions, &vocab, &extras)
            .or_else(|e| {
                // Provider trouble mid-profile: fall back to the offline
                // metrics rather than losing the prompt.
                eprintln!("prompt {}: {e}; retrying offline", set.prompt_id);
                *failed += 1;
                let offline = ProfileExtras {
                    max_pairs: args.max_pairs,
                    seed: run_config.seed,
                    ..Default::default()
                };
                diversity_profile(&set.prompt_id, &set.completions, &vocab, &offline)
            });
        match profile {
            Ok(p) => records.push(ProfileRecord::Diversity(p)),
            Err(e) => {
                eprintln!("prompt {}: diversity profile failed: {e}", set.prompt_id);
                *failed += 1;
            }
        }
    }
    Ok(records)
}

fn rigidity_records(
    args: &AnalyzeArgs,
    run_config: &RunConfig,
    sets: &[CompletionSet],
    failed: &mut usize,
) -> Result<Vec<ProfileRecord>> {
    let labeler = run_config.labeler_endpoint.as_ref().map(|url| {
        LabelerClient::new(&run_config.provider(url, run_config.labeler_model.as_ref()))
    });
    if labeler.is_none() {
        println!("no labeler endpoint configured; clustering over all rigid n-grams");
    }
    let threshold = match (args.min_count, args.min_fraction) {
        (Some(count), _) => RigidityThreshold::Count(count),
        (None, Some(fraction)) => RigidityThreshold::Fraction(fraction),
        (None, None) => RigidityThreshold::default(),
    };
    let opts = RigidityOptions { n: args.ngram_order, threshold, ..Default::default() };

    let mut records = Vec::with_capacity(sets.len());
    for set in sets {
        let labeler_ref = labeler.as_ref().map(|l| l as &dyn rlvrdetect::providers::NgramLabeler);
        let profile =
            rigidity_profile(&set.prompt_id, &set.prompt_text, &set.completions, labeler_ref, &opts)
                .or_else(|e| {
                    eprintln!("prompt {}: {e}; retrying without labeler", set.prompt_id);
                    *failed += 1;
                    rigidity_profile(&set.prompt_id, &set.prompt_text, &set.completions, None, &opts)
                });
        match profile {
            Ok(p) => {
                if args.heatmap {
                    let csv = co_occurrence_csv(&p.ngram_order, &p.co_occurrence);
                    let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("profiles");
                    let path = args
                        .out
                        .with_file_name(format!("{stem}-{}.csv", sanitize(&p.prompt_id)));
                    std::fs::write(&path, csv)?;
                }
                records.push(ProfileRecord::Rigidity(p));
            }
            Err(e) => {
                eprintln!("prompt {}: rigidity profile failed: {e}", set.prompt_id);
                *failed += 1;
            }
        }
    }
    Ok(records)
}
