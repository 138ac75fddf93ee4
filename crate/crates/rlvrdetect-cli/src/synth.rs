//! `rlvrdetect synth`: write the bundled synthetic benchmark corpus to
//! disk, optionally with offline completion sets so the whole
//! score-and-eval path runs without any endpoint.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rlvrdetect::corpus::{save_jsonl, SCHEMA_VERSION};
use rlvrdetect::sampler::CompletionSet;
use rlvrdetect::synthetic::{collapse_benchmark, SyntheticOptions};

use crate::manifest::write_manifest;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for prompts.jsonl (and completions.jsonl).
    #[arg(long, default_value = "synth")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub members: usize,
    #[arg(long, default_value_t = 100)]
    pub nonmembers: usize,
    /// Completions per prompt.
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Also write completion sets directly (no endpoint involved).
    #[arg(long)]
    pub with_completions: bool,
}

pub fn run(args: &SynthArgs) -> Result<u8> {
    let opts = SyntheticOptions {
        member_count: args.members,
        nonmember_count: args.nonmembers,
        completions_per_prompt: args.n,
        seed: args.seed,
        ..Default::default()
    };
    let bench = collapse_benchmark(&opts);

    let prompts_path = args.out_dir.join("prompts.jsonl");
    let completions_path = args.out_dir.join("completions.jsonl");
    let mut outputs = vec![prompts_path.clone()];
    if args.with_completions {
        outputs.push(completions_path.clone());
    }
    write_manifest(
        &prompts_path,
        "synth",
        serde_json::json!({
            "members": args.members,
            "nonmembers": args.nonmembers,
            "n": args.n,
            "seed": args.seed,
            "with_completions": args.with_completions,
        }),
        &[],
        &outputs,
    )?;

    save_jsonl(&prompts_path, &bench.records())?;
    println!("wrote {} prompts to {}", bench.prompts.len(), prompts_path.display());

    if args.with_completions {
        let fingerprint = format!("synthetic-seed{}", args.seed);
        let sets: Vec<CompletionSet> = bench
            .prompts
            .iter()
            .map(|p| CompletionSet {
                schema: SCHEMA_VERSION,
                prompt_id: p.record.id.clone(),
                prompt_text: p.record.prompt.clone(),
                model_name: "synthetic".to_string(),
                config_fingerprint: fingerprint.clone(),
                completions: p.completions.clone(),
                logprobs: None,
                prompt_logprobs: None,
                greedy: p.completions.first().cloned(),
                created_at: 0,
                truncated_flags: vec![false; p.completions.len()],
                partial: false,
            })
            .collect();
        save_jsonl(&completions_path, &sets)?;
        println!("wrote {} completion sets to {}", sets.len(), completions_path.display());
    }
    Ok(0)
}
