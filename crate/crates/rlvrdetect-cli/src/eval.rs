//! `rlvrdetect eval`: AUC reports from scores plus labeled prompts,
//! optionally restricted to dual-stage subsets.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use rlvrdetect::corpus::{load_jsonl, load_prompts, save_jsonl, PromptRecord, ScoreRecord};
use rlvrdetect::detector::Method;
use rlvrdetect::eval::{
    dual_stage_subsets, evaluate, render_reports, DualStageOptions, EvalReport, QuantileSide,
    SubsetTag,
};

use crate::config::{ConfigFlags, RunConfig};
use crate::manifest::write_manifest;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// scores.jsonl produced by `score`.
    pub scores: PathBuf,
    /// prompts.jsonl with labels.
    pub prompts: PathBuf,
    /// Output report file.
    #[arg(long, default_value = "report.jsonl")]
    pub out: PathBuf,
    /// Methods to report; defaults to every method present in the scores.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Quantile q in (0,1): also evaluate the stage-one PPL subset and a
    /// size-matched random control.
    #[arg(long, value_name = "Q")]
    pub dual_stage: Option<f64>,
    /// Which PPL tail the stage-one subset keeps: high | low.
    #[arg(long, default_value = "high")]
    pub quantile_side: QuantileSide,
    #[command(flatten)]
    pub config: ConfigFlags,
}

fn filter_pool<'a>(
    prompts: &'a [PromptRecord],
    scores: &'a [ScoreRecord],
    keep: &[String],
) -> (Vec<PromptRecord>, Vec<ScoreRecord>) {
    let keep: std::collections::HashSet<&str> = keep.iter().map(String::as_str).collect();
    let prompts = prompts.iter().filter(|p| keep.contains(p.id.as_str())).cloned().collect();
    let scores = scores.iter().filter(|s| keep.contains(s.prompt_id.as_str())).cloned().collect();
    (prompts, scores)
}

pub fn run(args: &EvalArgs) -> Result<u8> {
    let run_config = RunConfig::resolve(&args.config)?;
    let prompts = load_prompts(&args.prompts)?;
    let scores: Vec<ScoreRecord> = load_jsonl(&args.scores)?;

    let requested: Vec<String> = if args.method.is_empty() {
        let mut present: Vec<String> =
            scores.iter().map(|s| s.method.as_str().to_string()).collect();
        present.sort();
        present.dedup();
        if present.is_empty() {
            bail!("no scores in {}", args.scores.display());
        }
        present
    } else {
        args.method.clone()
    };

    write_manifest(
        &args.out,
        "eval",
        serde_json::json!({
            "run": run_config,
            "methods": requested,
            "dual_stage": args.dual_stage,
            "quantile_side": args.quantile_side.to_string(),
        }),
        &[&args.scores, &args.prompts],
        std::slice::from_ref(&args.out),
    )?;

    let mut reports: Vec<EvalReport> = evaluate(&prompts, &scores, &requested, SubsetTag::Full)?;

    if let Some(q) = args.dual_stage {
        let ppl: HashMap<String, f64> = scores
            .iter()
            .filter(|s| s.method == Method::Ppl)
            .map(|s| (s.prompt_id.clone(), s.score))
            .collect();
        let opts = DualStageOptions { q, side: args.quantile_side, seed: run_config.seed };
        let subsets = dual_stage_subsets(&prompts, &ppl, &opts)?;
        let (sub_prompts, sub_scores) = filter_pool(&prompts, &scores, &subsets.selected);
        reports.extend(evaluate(
            &sub_prompts,
            &sub_scores,
            &requested,
            SubsetTag::LowPretrainContamination,
        )?);
        let (ctl_prompts, ctl_scores) = filter_pool(&prompts, &scores, &subsets.control);
        reports.extend(evaluate(
            &ctl_prompts,
            &ctl_scores,
            &requested,
            SubsetTag::RandomControl,
        )?);
    }

    save_jsonl(&args.out, &reports)?;
    print!("{}", render_reports(&reports));
    println!("wrote {} reports to {}", reports.len(), args.out.display());
    Ok(0)
}
