//! Completion-set diversity metrics: lexical (expectation-adjusted distinct
//! n-grams), semantic (embedding cosine spread), and logical (NLI judgments
//! over completion pairs).
//!
//! EAD divides the observed distinct n-gram count by the count expected when
//! drawing the same number of n-grams uniformly from a vocabulary of size V:
//! `E[distinct] = V * (1 - (1 - 1/V)^C)`. This corrects the length bias of
//! plain distinct ratios. V defaults to the distinct n-gram count of the
//! evaluation pool and is recorded alongside every value so results remain
//! auditable; it can be pinned to a constant for cross-run comparisons.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SCHEMA_VERSION;
use crate::providers::{NliJudge, NliLabel, ProviderError};
use crate::text::whitespace_tokens;

/// Profile id used when metrics are pooled across all prompts.
pub const CROSS_INPUT_ID: &str = "cross-input";

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("no n-grams: every completion is shorter than n = {n}")]
    NoNgrams { n: usize },
    #[error("need at least 2 embeddings, got {m}")]
    TooFewEmbeddings { m: usize },
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("embedding at index {index} has zero norm")]
    ZeroVector { index: usize },
    #[error("need at least 2 completions for NLI diversity, got {m}")]
    TooFewCompletions { m: usize },
    #[error("NLI pair budget must be at least 1")]
    ZeroPairBudget,
    #[error("vocabulary size must be at least 1")]
    InvalidVocab,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// All contiguous n-token windows of `tokens`; empty when the window
/// exceeds the sequence.
pub fn extract_ngrams<T>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    assert!(n >= 1, "n-gram order must be at least 1");
    tokens.windows(n)
}

/// Where EAD's vocabulary size V comes from.
#[derive(Debug, Clone)]
pub enum VocabSource {
    /// Distinct n-grams over the completions being scored. The right choice
    /// for single-prompt use; for a corpus run, compute the pool vocabulary
    /// once and use `PerN`.
    CompletionPool,
    /// One fixed V for every n.
    Fixed(usize),
    /// Externally computed V per n-gram order.
    PerN(BTreeMap<u8, usize>),
}

fn pooled_ngrams(completions: &[String], n: usize) -> (usize, usize) {
    let mut distinct: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for completion in completions {
        let tokens = whitespace_tokens(completion);
        for gram in extract_ngrams(&tokens, n) {
            distinct.insert(gram.to_vec());
            total += 1;
        }
    }
    (distinct.len(), total)
}

/// Expected number of distinct values after C uniform draws from a
/// vocabulary of size V, in a cancellation-free form.
fn expected_distinct(v: usize, c: usize) -> f64 {
    let v = v as f64;
    // V * (1 - (1 - 1/V)^C) = -V * expm1(C * ln(1 - 1/V))
    -v * f64::exp_m1(c as f64 * f64::ln_1p(-1.0 / v))
}

/// Expectation-adjusted distinct n-grams at a single order.
///
/// Pools n-grams across all completions: `distinct / E[distinct | V, C]`.
pub fn ead_distinct_n(
    completions: &[String],
    n: usize,
    vocab_size: usize,
) -> Result<f64, DiversityError> {
    assert!(n >= 1, "n-gram order must be at least 1");
    if vocab_size == 0 {
        return Err(DiversityError::InvalidVocab);
    }
    let (distinct, total) = pooled_ngrams(completions, n);
    if total == 0 {
        return Err(DiversityError::NoNgrams { n });
    }
    Ok(distinct as f64 / expected_distinct(vocab_size, total))
}

/// EAD averaged over n-gram orders 1 through 5.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EadBreakdown {
    /// Mean over the orders that had any n-grams.
    pub average: f64,
    /// Value per order; `None` marks orders excluded for having no n-grams.
    pub by_n: BTreeMap<u8, Option<f64>>,
    /// Vocabulary size used per order.
    pub vocab_by_n: BTreeMap<u8, usize>,
}

/// Computes [`EadBreakdown`] over n in 1..=5. Orders where every completion
/// is too short are excluded from the mean and recorded as `None`; if all
/// five fail the result is `NoNgrams`.
pub fn ead_average(
    completions: &[String],
    vocab: &VocabSource,
) -> Result<EadBreakdown, DiversityError> {
    let mut by_n = BTreeMap::new();
    let mut vocab_by_n = BTreeMap::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    for n in 1u8..=5 {
        let v = match vocab {
            VocabSource::CompletionPool => pooled_ngrams(completions, n as usize).0,
            VocabSource::Fixed(v) => *v,
            VocabSource::PerN(map) => map.get(&n).copied().unwrap_or(0),
        };
        match ead_distinct_n(completions, n as usize, v.max(1)) {
            Ok(value) => {
                by_n.insert(n, Some(value));
                vocab_by_n.insert(n, v.max(1));
                sum += value;
                used += 1;
            }
            Err(DiversityError::NoNgrams { .. }) => {
                by_n.insert(n, None);
                vocab_by_n.insert(n, v.max(1));
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(DiversityError::NoNgrams { n: 1 });
    }
    Ok(EadBreakdown { average: sum / used as f64, by_n, vocab_by_n })
}

/// One minus the mean pairwise cosine similarity. Unit-norm embeddings give
/// values in `[0, 2]`; identical vectors give 0.
pub fn embedding_diversity(embeddings: &[Vec<f64>]) -> Result<f64, DiversityError> {
    let m = embeddings.len();
    if m < 2 {
        return Err(DiversityError::TooFewEmbeddings { m });
    }
    let dim = embeddings[0].len();
    let mut norms = Vec::with_capacity(m);
    for (index, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(DiversityError::DimensionMismatch { a: dim, b: e.len() });
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DiversityError::ZeroVector { index });
        }
        norms.push(norm);
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..m {
        for j in (i + 1)..m {
            let dot: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum();
            sum += dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ok(1.0 - sum / pairs as f64)
}

/// NLI diversity outcome: the proportion plus how many pairs backed it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NliOutcome {
    /// (entailment + contradiction) / judged pairs.
    pub value: f64,
    pub judged_pairs: usize,
}

/// Proportion of completion pairs judged entailment or contradiction.
///
/// Unordered pairs are enumerated in index order; when there are more than
/// `max_pairs`, a uniform seeded subsample is judged instead. Each pair is
/// judged once, with the lexicographically smaller completion as premise, so
/// results are deterministic for a deterministic judge.
pub fn nli_diversity(
    completions: &[String],
    judge: &dyn NliJudge,
    max_pairs: usize,
    seed: u64,
) -> Result<NliOutcome, DiversityError> {
    let m = completions.len();
    if m < 2 {
        return Err(DiversityError::TooFewCompletions { m });
    }
    if max_pairs == 0 {
        return Err(DiversityError::ZeroPairBudget);
    }
    let mut pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect();
    if pairs.len() > max_pairs {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keep = index_sample(&mut rng, pairs.len(), max_pairs).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|idx| pairs[idx]).collect();
    }

    let mut decisive = 0usize;
    for &(i, j) in &pairs {
        let (premise, hypothesis) = if completions[i] <= completions[j] {
            (&completions[i], &completions[j])
        } else {
            (&completions[j], &completions[i])
        };
        match judge.judge(premise, hypothesis)? {
            NliLabel::Entailment | NliLabel::Contradiction => decisive += 1,
            NliLabel::Neutral => {}
        }
    }
    Ok(NliOutcome { value: decisive as f64 / pairs.len() as f64, judged_pairs: pairs.len() })
}

/// Per-prompt (or cross-input) diversity record, as persisted to profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityProfile {
    pub schema: u32,
    pub prompt_id: String,
    pub ead: f64,
    pub ead_by_n: BTreeMap<u8, Option<f64>>,
    pub ead_vocab_by_n: BTreeMap<u8, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_diversity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_diversity: Option<f64>,
    /// Pairs actually judged for `nli_diversity`; 0 when NLI was off.
    pub pair_count: usize,
    /// Identifiers of the providers that contributed optional metrics.
    pub provider_ids: Vec<String>,
}

/// Optional provider-backed inputs for a diversity profile.
pub struct ProfileExtras<'a> {
    pub nli: Option<(&'a dyn NliJudge, String)>,
    pub max_pairs: usize,
    pub seed: u64,
    /// Pre-fetched embeddings, index-aligned with the completions, plus the
    /// provider id they came from.
    pub embeddings: Option<(&'a [Vec<f64>], String)>,
}

impl Default for ProfileExtras<'_> {
    fn default() -> Self {
        ProfileExtras { nli: None, max_pairs: 64, seed: 0, embeddings: None }
    }
}

/// Assembles a full diversity profile for one completion set.
pub fn diversity_profile(
    prompt_id: &str,
    completions: &[String],
    vocab: &VocabSource,
    extras: &ProfileExtras<'_>,
) -> Result<DiversityProfile, DiversityError> {
    let ead = ead_average(completions, vocab)?;
    let mut provider_ids = Vec::new();
    let (nli_value, pair_count) = match &extras.nli {
        Some((judge, id)) => {
            let outcome = nli_diversity(completions, *judge, extras.max_pairs, extras.seed)?;
            provider_ids.push(id.clone());
            (Some(outcome.value), outcome.judged_pairs)
        }
        None => (None, 0),
    };
    let embedding_value = match &extras.embeddings {
        Some((vectors, id)) => {
            let value = embedding_diversity(vectors)?;
            provider_ids.push(id.clone());
            Some(value)
        }
        None => None,
    };
    Ok(DiversityProfile {
        schema: SCHEMA_VERSION,
        prompt_id: prompt_id.to_string(),
        ead: ead.average,
        ead_by_n: ead.by_n,
        ead_vocab_by_n: ead.vocab_by_n,
        nli_diversity: nli_value,
        embedding_diversity: embedding_value,
        pair_count,
        provider_ids,
    })
}
