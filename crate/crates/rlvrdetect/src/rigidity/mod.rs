//! Rigid n-gram extraction, categorization, and reasoning-structure
//! clustering over completion sets.
//!
//! An n-gram is *rigid* when it appears in at least a threshold number of
//! completions, counted once per completion. Rigid n-grams are categorized
//! by an external labeling endpoint into restatement / logic / boilerplate /
//! other; the logic ones define binary presence vectors per completion, and
//! hierarchical agglomerative clustering over those vectors counts the
//! distinct reasoning structures the model falls into for one prompt.

mod cluster;

pub use cluster::{structure_clusters, ClusterMetric, ClusterOptions, ClusterResult, Linkage};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SCHEMA_VERSION;
use crate::providers::{NgramLabeler, ProviderError};
use crate::text::whitespace_tokens;

/// Task text sent verbatim to the labeling endpoint, together with the
/// problem, the annotated sample answer, and the n-gram list.
pub const LABELING_TASK: &str = "You will be given: (1) a problem statement, (2) one sample model answer\n\
for that problem, and (3) a list of n-grams extracted from multiple\n\
model answers to the same problem. Your job is to label EACH n-gram with\n\
exactly one category from: restatement, logic, boilerplate, other.\n\
\n\
Labeling rules:\n\
1) restatement: the n-gram repeats or paraphrases the problem statement. If\n\
the n-gram appears verbatim in the problem statement, it MUST be labeled\n\
restatement.\n\
2) logic: the n-gram expresses problem-specific reasoning, math relations,\n\
formulas, constraints, or derived quantities.\n\
3) boilerplate: generic reasoning template language (e.g., 'we need to',\n\
'let us', 'therefore', 'in conclusion'), or domain-agnostic filler.\n\
4) other: everything else that does not fit the above.\n\
\n\
Important:\n\
- Use the problem statement and the sample answer as context.\n\
- The sample answer includes inline markers [...] around matching n-grams.\n\
- Do not invent new n-grams or change the provided strings.\n\
- Output ONLY a JSON object mapping each input n-gram to one of the labels.\n\
- Include all n-grams, even if uncertain.\n\
- Keep the n-gram strings exactly as given.";

#[derive(Debug, Error)]
pub enum RigidityError {
    #[error("no n-grams to label")]
    NoNgrams,
    #[error("no profiles to histogram")]
    EmptyProfiles,
    #[error("labeler failed: {0}")]
    Labeler(#[from] ProviderError),
}

/// Label set for rigid n-grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NgramCategory {
    Restatement,
    Logic,
    Boilerplate,
    Other,
}

impl std::str::FromStr for NgramCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "restatement" => Ok(NgramCategory::Restatement),
            "logic" => Ok(NgramCategory::Logic),
            "boilerplate" => Ok(NgramCategory::Boilerplate),
            "other" => Ok(NgramCategory::Other),
            other => Err(format!("unknown n-gram category {other:?}")),
        }
    }
}

/// Rigidity support threshold: a fraction of the completion count, or an
/// absolute completion count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum RigidityThreshold {
    Fraction(f64),
    Count(usize),
}

impl Default for RigidityThreshold {
    fn default() -> Self {
        RigidityThreshold::Fraction(0.5)
    }
}

impl RigidityThreshold {
    /// Minimum completions an n-gram must appear in, for a set of `m`.
    /// Never below 1.
    fn min_support(&self, m: usize) -> usize {
        match *self {
            RigidityThreshold::Fraction(f) => ((f * m as f64).ceil() as usize).max(1),
            RigidityThreshold::Count(c) => c.max(1),
        }
    }
}

/// N-grams present in at least the threshold number of completions, with
/// their support counts. Presence is counted once per completion; keys are
/// the n-gram tokens joined by single spaces.
pub fn rigid_ngrams(
    completions: &[String],
    n: usize,
    threshold: RigidityThreshold,
) -> BTreeMap<String, usize> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let m = completions.len();
    let mut support: BTreeMap<String, usize> = BTreeMap::new();
    for completion in completions {
        let tokens = whitespace_tokens(completion);
        let mut seen: std::collections::HashSet<&[&str]> = std::collections::HashSet::new();
        for gram in crate::diversity::extract_ngrams(&tokens, n) {
            if seen.insert(gram) {
                *support.entry(gram.join(" ")).or_insert(0) += 1;
            }
        }
    }
    let min = threshold.min_support(m);
    support.retain(|_, count| *count >= min);
    support
}

/// Wraps maximal runs of n-gram-matched tokens in `[...]` markers, the
/// annotation format the labeling task describes.
pub fn annotate_answer(sample_answer: &str, ngrams: &[String]) -> String {
    let tokens = whitespace_tokens(sample_answer);
    if tokens.is_empty() {
        return String::new();
    }
    let mut covered = vec![false; tokens.len()];
    for ngram in ngrams {
        let gram_tokens = whitespace_tokens(ngram);
        if gram_tokens.is_empty() || gram_tokens.len() > tokens.len() {
            continue;
        }
        for (start, window) in tokens.windows(gram_tokens.len()).enumerate() {
            if window == gram_tokens.as_slice() {
                for flag in &mut covered[start..start + gram_tokens.len()] {
                    *flag = true;
                }
            }
        }
    }
    let mut out = String::new();
    let mut in_run = false;
    for (i, token) in tokens.iter().enumerate() {
        if !out.is_empty() {
            out.push(' ');
        }
        if covered[i] && !in_run {
            out.push('[');
            in_run = true;
        }
        out.push_str(token);
        if in_run && (i + 1 == tokens.len() || !covered[i + 1]) {
            out.push(']');
            in_run = false;
        }
    }
    out
}

/// Categorized n-grams plus the ones that needed the `other` fallback
/// because the labeler omitted them or returned an unknown label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub categories: BTreeMap<String, NgramCategory>,
    pub fallback: Vec<String>,
}

/// Sends the labeling task for `ngrams` and normalizes the response.
///
/// Every input n-gram gets a category: ones the labeler skipped or labeled
/// outside the category set are assigned [`NgramCategory::Other`] and listed
/// in `fallback`.
pub fn label_ngrams(
    problem: &str,
    sample_answer: &str,
    ngrams: &[String],
    labeler: &dyn NgramLabeler,
) -> Result<LabelOutcome, RigidityError> {
    if ngrams.is_empty() {
        return Err(RigidityError::NoNgrams);
    }
    let annotated = annotate_answer(sample_answer, ngrams);
    let raw = labeler.label(problem, &annotated, ngrams)?;
    let mut categories = BTreeMap::new();
    let mut fallback = Vec::new();
    for ngram in ngrams {
        match raw.get(ngram).map(|s| s.parse::<NgramCategory>()) {
            Some(Ok(category)) => {
                categories.insert(ngram.clone(), category);
            }
            _ => {
                categories.insert(ngram.clone(), NgramCategory::Other);
                fallback.push(ngram.clone());
            }
        }
    }
    Ok(LabelOutcome { categories, fallback })
}

/// Which rigid n-grams feed structure clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScope {
    /// Only n-grams the labeler categorized as `logic`.
    #[default]
    LogicOnly,
    /// Every rigid n-gram; also the fallback when no labeler is configured.
    AllRigid,
}

/// Binary presence matrix: one row per n-gram (in `ngrams` order), one
/// column per completion.
pub fn co_occurrence_matrix(completions: &[String], ngrams: &[String]) -> Vec<Vec<u8>> {
    let token_sets: Vec<Vec<&str>> = completions.iter().map(|c| whitespace_tokens(c)).collect();
    ngrams
        .iter()
        .map(|ngram| {
            let gram_tokens = whitespace_tokens(ngram);
            token_sets
                .iter()
                .map(|tokens| {
                    let hit = !gram_tokens.is_empty()
                        && tokens.len() >= gram_tokens.len()
                        && tokens.windows(gram_tokens.len()).any(|w| w == gram_tokens.as_slice());
                    u8::from(hit)
                })
                .collect()
        })
        .collect()
}

/// CSV dump of a co-occurrence matrix: `ngram, completion_0, ...` header,
/// then one row per n-gram.
pub fn co_occurrence_csv(ngrams: &[String], matrix: &[Vec<u8>]) -> String {
    let columns = matrix.first().map_or(0, Vec::len);
    let mut out = String::from("ngram");
    for i in 0..columns {
        out.push_str(&format!(",completion_{i}"));
    }
    out.push('\n');
    for (ngram, row) in ngrams.iter().zip(matrix) {
        out.push_str(&csv_field(ngram));
        for &cell in row {
            out.push_str(&format!(",{cell}"));
        }
        out.push('\n');
    }
    out
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Per-prompt rigidity analysis, as persisted to profiles.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityProfile {
    pub schema: u32,
    pub prompt_id: String,
    /// N-gram order analyzed.
    pub n: usize,
    /// Completions analyzed.
    pub m: usize,
    pub threshold: RigidityThreshold,
    pub rigid_ngrams: BTreeMap<String, usize>,
    pub categories: BTreeMap<String, NgramCategory>,
    /// N-grams that fell back to `other` (labeler omissions / unknowns).
    pub fallback_ngrams: Vec<String>,
    pub labeler_used: bool,
    /// Scope that actually fed clustering. `LogicOnly` silently becomes
    /// `AllRigid` when no labeler is available, and that is recorded here.
    pub feature_scope: FeatureScope,
    pub cluster_options: ClusterOptions,
    pub cluster_count: usize,
    pub cluster_assignment: Vec<usize>,
    /// Set when clustering had no features and every completion became its
    /// own singleton cluster.
    pub degenerate_clustering: bool,
    /// Row order for `co_occurrence`.
    pub ngram_order: Vec<String>,
    /// N-gram x completion presence, for heatmap export.
    pub co_occurrence: Vec<Vec<u8>>,
}

/// Settings for building one rigidity profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityOptions {
    pub n: usize,
    pub threshold: RigidityThreshold,
    pub feature_scope: FeatureScope,
    pub cluster: ClusterOptions,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        RigidityOptions {
            n: 3,
            threshold: RigidityThreshold::default(),
            feature_scope: FeatureScope::default(),
            cluster: ClusterOptions::default(),
        }
    }
}

/// Extracts rigid n-grams, labels them when a labeler is available, and
/// clusters completion structures.
///
/// Without a labeler the categories map stays empty and clustering runs over
/// all rigid n-grams, recorded via `feature_scope` and `labeler_used`. The
/// first completion serves as the labeling task's sample answer.
pub fn rigidity_profile(
    prompt_id: &str,
    problem: &str,
    completions: &[String],
    labeler: Option<&dyn NgramLabeler>,
    opts: &RigidityOptions,
) -> Result<RigidityProfile, RigidityError> {
    let rigid = rigid_ngrams(completions, opts.n, opts.threshold);
    let ngram_order: Vec<String> = rigid.keys().cloned().collect();

    let (categories, fallback, labeler_used) = match labeler {
        Some(labeler) if !ngram_order.is_empty() => {
            let sample_answer = completions.first().map(String::as_str).unwrap_or("");
            let outcome = label_ngrams(problem, sample_answer, &ngram_order, labeler)?;
            (outcome.categories, outcome.fallback, true)
        }
        Some(_) => (BTreeMap::new(), Vec::new(), true),
        None => (BTreeMap::new(), Vec::new(), false),
    };

    let effective_scope = match (opts.feature_scope, labeler_used) {
        (FeatureScope::LogicOnly, true) => FeatureScope::LogicOnly,
        // Without labels there is no logic subset to restrict to.
        (FeatureScope::LogicOnly, false) => FeatureScope::AllRigid,
        (FeatureScope::AllRigid, _) => FeatureScope::AllRigid,
    };
    let features: Vec<String> = match effective_scope {
        FeatureScope::LogicOnly => ngram_order
            .iter()
            .filter(|g| categories.get(*g) == Some(&NgramCategory::Logic))
            .cloned()
            .collect(),
        FeatureScope::AllRigid => ngram_order.clone(),
    };
    let clusters = structure_clusters(completions, &features, &opts.cluster);
    let co_occurrence = co_occurrence_matrix(completions, &ngram_order);

    Ok(RigidityProfile {
        schema: SCHEMA_VERSION,
        prompt_id: prompt_id.to_string(),
        n: opts.n,
        m: completions.len(),
        threshold: opts.threshold,
        rigid_ngrams: rigid,
        categories,
        fallback_ngrams: fallback,
        labeler_used,
        feature_scope: effective_scope,
        cluster_options: opts.cluster.clone(),
        cluster_count: clusters.cluster_count,
        cluster_assignment: clusters.assignment,
        degenerate_clustering: clusters.degenerate,
        ngram_order,
        co_occurrence,
    })
}

/// Histogram of per-prompt cluster counts with the cumulative fractions at
/// the reporting thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterHistogram {
    /// cluster_count -> number of prompts.
    pub counts: BTreeMap<usize, usize>,
    /// (threshold, fraction of prompts with cluster_count <= threshold) at
    /// thresholds 2, 4, 8, 16.
    pub cumulative: Vec<(usize, f64)>,
}

/// Aggregates cluster counts across profiles.
pub fn cluster_histogram(profiles: &[RigidityProfile]) -> Result<ClusterHistogram, RigidityError> {
    if profiles.is_empty() {
        return Err(RigidityError::EmptyProfiles);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for profile in profiles {
        *counts.entry(profile.cluster_count).or_insert(0) += 1;
    }
    let total = profiles.len() as f64;
    let cumulative = [2usize, 4, 8, 16]
        .iter()
        .map(|&t| {
            let covered: usize =
                counts.iter().filter(|(&count, _)| count <= t).map(|(_, &n)| n).sum();
            (t, covered as f64 / total)
        })
        .collect();
    Ok(ClusterHistogram { counts, cumulative })
}
