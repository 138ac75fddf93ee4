//! Evaluation: ROC-AUC, dual-stage contamination subsets, report assembly.
//!
//! AUC is computed by the rank statistic: orient scores so that higher means
//! member, rank the pooled scores with average ranks for ties, and take
//! `U / (n_member * n_nonmember)` where `U` is the Mann-Whitney statistic of
//! the member class. Ties therefore contribute half credit, matching the
//! pair-counting definition `(#(member > nonmember) + #ties / 2) / total`.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, PromptRecord, ScoreRecord, SCHEMA_VERSION};
use crate::detector::Orientation;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no {class} examples in the evaluation pool")]
    EmptyClass { class: &'static str },
    #[error("score at index {index} in {class} scores is not finite")]
    NonFiniteScore { class: &'static str, index: usize },
    #[error("prompt {id:?} has no membership label")]
    UnlabeledPrompt { id: String },
    #[error("score references unknown prompt {prompt_id:?}")]
    UnknownPrompt { prompt_id: String },
    #[error("method {method} has no score for prompt {prompt_id:?}")]
    ScoreCoverageGap { method: String, prompt_id: String },
    #[error("method {method} has more than one score for prompt {prompt_id:?}")]
    DuplicateScore { method: String, prompt_id: String },
    #[error("method {method} has scores with conflicting orientations")]
    MixedOrientation { method: String },
    #[error("method {method} score for prompt {prompt_id:?} is NaN")]
    BadScore { method: String, prompt_id: String },
    #[error("prompt {prompt_id:?} has no stage-one score")]
    MissingScores { prompt_id: String },
    #[error("quantile q = {q} is out of range, need 0 < q < 1")]
    InvalidQuantile { q: f64 },
}

/// Area under the ROC curve for separating members from non-members.
///
/// `orientation` states which direction of the raw score indicates
/// membership; the result is always in `[0, 1]` with 0.5 meaning chance.
/// Infinite scores are legal (they rank at the extremes); NaN is not.
pub fn roc_auc(
    member_scores: &[f64],
    nonmember_scores: &[f64],
    orientation: Orientation,
) -> Result<f64, EvalError> {
    if member_scores.is_empty() {
        return Err(EvalError::EmptyClass { class: "member" });
    }
    if nonmember_scores.is_empty() {
        return Err(EvalError::EmptyClass { class: "non-member" });
    }
    for (index, s) in member_scores.iter().enumerate() {
        if s.is_nan() {
            return Err(EvalError::NonFiniteScore { class: "member", index });
        }
    }
    for (index, s) in nonmember_scores.iter().enumerate() {
        if s.is_nan() {
            return Err(EvalError::NonFiniteScore { class: "non-member", index });
        }
    }
    let orient = |s: f64| match orientation {
        Orientation::HigherMeansMember => s,
        Orientation::LowerMeansMember => -s,
    };

    let mut pooled: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (orient(s), true))
        .chain(nonmember_scores.iter().map(|&s| (orient(s), false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut member_rank_sum = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average rank (i + 1 + j) / 2.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                member_rank_sum += avg_rank;
            }
        }
        i = j;
    }

    let n_m = member_scores.len() as f64;
    let n_n = nonmember_scores.len() as f64;
    let u = member_rank_sum - n_m * (n_m + 1.0) / 2.0;
    Ok(u / (n_m * n_n))
}

/// Which side of the stage-one score distribution to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuantileSide {
    /// Highest stage-one scores. Under PPL this keeps the prompts the base
    /// model memorized least, the low-pretrain-contamination regime.
    #[default]
    High,
    Low,
}

impl std::fmt::Display for QuantileSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuantileSide::High => "high",
            QuantileSide::Low => "low",
        })
    }
}

impl std::str::FromStr for QuantileSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(QuantileSide::High),
            "low" => Ok(QuantileSide::Low),
            other => Err(format!("unknown quantile side {other:?}, expected \"high\" or \"low\"")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualStageOptions {
    /// Fraction of the pool to keep, strictly inside (0, 1); subset size is
    /// `ceil(q * N)`.
    pub q: f64,
    pub side: QuantileSide,
    /// Seeds the size-matched random control draw.
    pub seed: u64,
}

impl Default for DualStageOptions {
    fn default() -> Self {
        DualStageOptions { q: 0.5, side: QuantileSide::High, seed: 0 }
    }
}

/// Prompt ids selected by the stage-one filter plus a size-matched random
/// control, both in original corpus order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualStageSubsets {
    pub selected: Vec<String>,
    pub control: Vec<String>,
    pub subset_size: usize,
}

/// Stage-one subset construction for dual-stage evaluation.
///
/// `stage_one` maps every corpus prompt id to its stage-one score (typically
/// prompt perplexity); a missing entry is an error. Ties on the score break
/// by corpus position, so the output is deterministic for a fixed corpus
/// order and seed.
pub fn dual_stage_subsets(
    corpus: &[PromptRecord],
    stage_one: &HashMap<String, f64>,
    opts: &DualStageOptions,
) -> Result<DualStageSubsets, EvalError> {
    if !(opts.q.is_finite() && opts.q > 0.0 && opts.q < 1.0) {
        return Err(EvalError::InvalidQuantile { q: opts.q });
    }
    if corpus.is_empty() {
        return Err(EvalError::EmptyClass { class: "pool" });
    }
    let mut scores = Vec::with_capacity(corpus.len());
    for (index, p) in corpus.iter().enumerate() {
        let Some(&s) = stage_one.get(&p.id) else {
            return Err(EvalError::MissingScores { prompt_id: p.id.clone() });
        };
        if s.is_nan() {
            return Err(EvalError::NonFiniteScore { class: "pool", index });
        }
        scores.push(s);
    }
    let n = corpus.len();
    let size = ((opts.q * n as f64).ceil() as usize).clamp(1, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let by_score = match opts.side {
            QuantileSide::High => scores[b].total_cmp(&scores[a]),
            QuantileSide::Low => scores[a].total_cmp(&scores[b]),
        };
        by_score.then(a.cmp(&b))
    });
    let mut selected_idx: Vec<usize> = order[..size].to_vec();
    selected_idx.sort_unstable();

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut control_idx = index_sample(&mut rng, n, size).into_vec();
    control_idx.sort_unstable();

    Ok(DualStageSubsets {
        selected: selected_idx.iter().map(|&i| corpus[i].id.clone()).collect(),
        control: control_idx.iter().map(|&i| corpus[i].id.clone()).collect(),
        subset_size: size,
    })
}

/// Evaluation pool tag recorded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetTag {
    Full,
    LowPretrainContamination,
    RandomControl,
}

impl std::fmt::Display for SubsetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubsetTag::Full => "full",
            SubsetTag::LowPretrainContamination => "low-pretrain-contamination",
            SubsetTag::RandomControl => "random-control",
        })
    }
}

/// One prompt's contribution to a method's evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleScore {
    pub prompt_id: String,
    pub score: f64,
    pub label: Label,
}

/// One method's evaluation over one pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub method: String,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub n_member: usize,
    pub n_nonmember: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    pub subset: SubsetTag,
    pub examples: Vec<ExampleScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Computes one report per method over a labeled pool, ordered by AUC
/// descending with unavailable methods at the end.
///
/// Every prompt must carry a label and both classes must be present. Each
/// method that appears in `scores` must cover every prompt exactly once with
/// a consistent orientation. `requested` methods with no scores at all are
/// reported as unavailable rather than failing, so logprob-dependent
/// baselines degrade gracefully against endpoints that cannot serve them.
pub fn evaluate(
    prompts: &[PromptRecord],
    scores: &[ScoreRecord],
    requested: &[String],
    subset: SubsetTag,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut labels: HashMap<&str, Label> = HashMap::new();
    let mut n_member = 0usize;
    let mut n_nonmember = 0usize;
    for p in prompts {
        match p.label {
            Some(label) => {
                labels.insert(p.id.as_str(), label);
                match label {
                    Label::Member => n_member += 1,
                    Label::NonMember => n_nonmember += 1,
                }
            }
            None => return Err(EvalError::UnlabeledPrompt { id: p.id.clone() }),
        }
    }
    if n_member == 0 {
        return Err(EvalError::EmptyClass { class: "member" });
    }
    if n_nonmember == 0 {
        return Err(EvalError::EmptyClass { class: "non-member" });
    }

    let mut by_method: BTreeMap<String, Vec<&ScoreRecord>> = BTreeMap::new();
    for s in scores {
        if !labels.contains_key(s.prompt_id.as_str()) {
            return Err(EvalError::UnknownPrompt { prompt_id: s.prompt_id.clone() });
        }
        by_method.entry(s.method.as_str().to_string()).or_default().push(s);
    }

    let mut method_names: Vec<String> = requested.to_vec();
    for name in by_method.keys() {
        if !method_names.contains(name) {
            method_names.push(name.clone());
        }
    }

    let mut reports = Vec::new();
    for name in method_names {
        let Some(records) = by_method.get(&name) else {
            reports.push(EvalReport {
                schema: SCHEMA_VERSION,
                method: name,
                available: false,
                auc: None,
                n_member,
                n_nonmember,
                orientation: None,
                subset,
                examples: Vec::new(),
                note: Some("unavailable: no scores".to_string()),
            });
            continue;
        };

        let mut seen: HashSet<&str> = HashSet::new();
        let orientation = records[0].orientation;
        let mut member_scores = Vec::new();
        let mut nonmember_scores = Vec::new();
        let mut examples = Vec::with_capacity(records.len());
        for r in records.iter() {
            if r.orientation != orientation {
                return Err(EvalError::MixedOrientation { method: name });
            }
            if !seen.insert(r.prompt_id.as_str()) {
                return Err(EvalError::DuplicateScore {
                    method: name,
                    prompt_id: r.prompt_id.clone(),
                });
            }
            if r.score.is_nan() {
                return Err(EvalError::BadScore { method: name, prompt_id: r.prompt_id.clone() });
            }
            let label = labels[r.prompt_id.as_str()];
            match label {
                Label::Member => member_scores.push(r.score),
                Label::NonMember => nonmember_scores.push(r.score),
            }
            examples.push(ExampleScore { prompt_id: r.prompt_id.clone(), score: r.score, label });
        }
        for id in labels.keys() {
            if !seen.contains(id) {
                return Err(EvalError::ScoreCoverageGap {
                    method: name,
                    prompt_id: (*id).to_string(),
                });
            }
        }

        let auc = roc_auc(&member_scores, &nonmember_scores, orientation)?;
        reports.push(EvalReport {
            schema: SCHEMA_VERSION,
            method: name,
            available: true,
            auc: Some(auc),
            n_member,
            n_nonmember,
            orientation: Some(orientation),
            subset,
            examples,
            note: None,
        });
    }

    reports.sort_by(|a, b| match (a.auc, b.auc) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.method.cmp(&b.method),
    });
    Ok(reports)
}

/// Plain-text comparison table over per-method reports.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mut current_subset: Option<SubsetTag> = None;
    for report in reports {
        if current_subset != Some(report.subset) {
            if current_subset.is_some() {
                out.push('\n');
            }
            out.push_str(&format!(
                "subset: {} ({} member / {} non-member)\n",
                report.subset, report.n_member, report.n_nonmember
            ));
            out.push_str(&format!(
                "  {:<14} {:>9}  {:<19} {}\n",
                "method", "auc", "orientation", "note"
            ));
            current_subset = Some(report.subset);
        }
        let auc = report.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        let orient = report.orientation.map_or_else(
            || "-".to_string(),
            |o| match o {
                Orientation::LowerMeansMember => "lower-means-member".to_string(),
                Orientation::HigherMeansMember => "higher-means-member".to_string(),
            },
        );
        out.push_str(&format!(
            "  {:<14} {:>9}  {:<19} {}\n",
            report.method,
            auc,
            orient,
            report.note.as_deref().unwrap_or("")
        ));
    }
    out
}
