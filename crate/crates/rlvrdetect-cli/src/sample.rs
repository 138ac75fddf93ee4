//! `rlvrdetect sample`: pull completion sets for a prompts file.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rlvrdetect::corpus::{load_prompts, save_jsonl};
use rlvrdetect::sampler::{Sampler, SamplerError, SamplingConfig};

use crate::config::{parse_sweep, suffixed_path, ConfigFlags, RunConfig};
use crate::manifest::write_manifest;

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// prompts.jsonl ({id, prompt, label?, source?} per line).
    pub prompts: PathBuf,
    /// Output completions file.
    #[arg(long, default_value = "completions.jsonl")]
    pub out: PathBuf,
    /// Also fetch one greedy (temperature 0) completion per prompt (cdd
    /// needs it).
    #[arg(long)]
    pub greedy: bool,
    /// Capture completion and prompt logprobs (ppl / min-k-percent need
    /// them).
    #[arg(long)]
    pub logprobs: bool,
    /// Sample once per setting: n=8,16 or temperature=0.5,0.7.
    #[arg(long, value_name = "KEY=V1,V2")]
    pub sweep: Option<String>,
    #[command(flatten)]
    pub config: ConfigFlags,
}

fn sweep_settings(
    base: &SamplingConfig,
    sweep: Option<&str>,
) -> Result<Vec<(String, SamplingConfig)>> {
    let Some(raw) = sweep else {
        return Ok(vec![(String::new(), base.clone())]);
    };
    let spec = parse_sweep(raw, &["n", "temperature"])?;
    let mut settings = Vec::with_capacity(spec.values.len());
    for value in &spec.values {
        let mut config = base.clone();
        match spec.key.as_str() {
            "n" => config.n_samples = value.parse().context("bad --sweep n value")?,
            "temperature" => {
                config.temperature = value.parse().context("bad --sweep temperature value")?
            }
            _ => unreachable!("parse_sweep enforces the key set"),
        }
        settings.push((format!("-{}{}", spec.key, value), config));
    }
    Ok(settings)
}

pub fn run(args: &SampleArgs) -> Result<u8> {
    let run_config = RunConfig::resolve(&args.config)?;
    let mut sampling = run_config.sampling.clone();
    sampling.want_logprobs |= args.logprobs;
    sampling.validate()?;

    let prompts = load_prompts(&args.prompts)?;
    let settings = sweep_settings(&sampling, args.sweep.as_deref())?;
    let outputs: Vec<PathBuf> =
        settings.iter().map(|(suffix, _)| suffixed_path(&args.out, suffix)).collect();

    write_manifest(
        &args.out,
        "sample",
        serde_json::json!({
            "run": run_config,
            "want_logprobs": sampling.want_logprobs,
            "greedy": args.greedy,
            "sweep": args.sweep,
        }),
        &[&args.prompts],
        &outputs,
    )?;

    let mut failed = 0usize;
    for ((_, config), out_path) in settings.iter().zip(&outputs) {
        let sampler = Sampler::new(config.clone(), Some(run_config.cache_dir.clone()))?;
        let outcomes = sampler.batch_sample(&prompts, args.greedy);
        let mut sets = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            match outcome.result {
                Ok(set) => sets.push(set),
                Err(SamplerError::Partial { got, want, set }) => {
                    eprintln!(
                        "prompt {}: partial set ({got}/{want} completions), kept and flagged",
                        outcome.prompt_id
                    );
                    sets.push(*set);
                    failed += 1;
                }
                Err(e) => {
                    eprintln!("prompt {}: {e}", outcome.prompt_id);
                    failed += 1;
                }
            }
        }
        save_jsonl(out_path, &sets)?;
        println!("wrote {} completion sets to {}", sets.len(), out_path.display());
    }
    if failed > 0 {
        eprintln!("{failed} prompt(s) failed; see messages above");
        return Ok(1);
    }
    Ok(0)
}
