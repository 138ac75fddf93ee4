//! Seeded synthetic corpora for benchmarks and tests.
//!
//! Two generators live here. The collapse benchmark produces labeled
//! prompts with completion sets that imitate the measured behavior of
//! RL-trained models: "member" prompts collapse onto a handful of templates
//! with light token noise, "non-member" prompts get mutually distant random
//! sequences. The structured-group generator produces completion sets built
//! from a known number of disjoint template groups, for validating cluster
//! recovery.
//!
//! Everything is driven by explicit seeds through ChaCha20, so identical
//! inputs give identical corpora on every platform.

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Label, PromptRecord};

/// Marker embedded in member prompt texts. The stub server keys on it to
/// decide whether a prompt gets collapsed or diverse completions, so a
/// generated corpus round-trips through the HTTP pipeline with the same
/// member/non-member geometry it has on disk.
pub const MEMBER_MARKER: &str = "[seen]";

#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub member_count: usize,
    pub nonmember_count: usize,
    pub completions_per_prompt: usize,
    /// Upper bound on completion length in tokens; actual lengths vary a
    /// few tokens below it.
    pub tokens_per_completion: usize,
    pub vocab_size: usize,
    /// Fraction of a member completion's tokens that may be mutated away
    /// from its template (hard cap, floor of rate times length).
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            member_count: 100,
            nonmember_count: 100,
            completions_per_prompt: 32,
            tokens_per_completion: 100,
            vocab_size: 500,
            mutation_rate: 0.05,
            seed: 17,
        }
    }
}

/// One generated prompt with its completion set and ground-truth label
/// (always present on `record.label`).
#[derive(Debug, Clone)]
pub struct SyntheticPrompt {
    pub record: PromptRecord,
    pub completions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub prompts: Vec<SyntheticPrompt>,
}

impl SyntheticBenchmark {
    pub fn records(&self) -> Vec<PromptRecord> {
        self.prompts.iter().map(|p| p.record.clone()).collect()
    }
}

fn vocab(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("tok{i}")).collect()
}

fn random_sequence(rng: &mut ChaCha20Rng, vocab: &[String], len: usize) -> Vec<String> {
    (0..len).map(|_| vocab.choose(rng).expect("vocab non-empty").clone()).collect()
}

/// Template with at most `floor(rate * len)` token substitutions.
fn mutate(rng: &mut ChaCha20Rng, template: &[String], vocab: &[String], rate: f64) -> Vec<String> {
    let mut tokens = template.to_vec();
    let cap = ((rate * tokens.len() as f64).floor() as usize).min(tokens.len());
    let count = rng.random_range(0..=cap);
    for _ in 0..count {
        let pos = rng.random_range(0..tokens.len());
        tokens[pos] = vocab.choose(rng).expect("vocab non-empty").clone();
    }
    tokens
}

fn member_prompt_text(index: usize) -> String {
    format!(
        "Problem {index}: simplify the expression {MEMBER_MARKER} and state the final value."
    )
}

fn nonmember_prompt_text(index: usize) -> String {
    format!("Problem {index}: simplify the expression and state the final value.")
}

fn prompt_record(id: String, prompt: String, label: Label) -> PromptRecord {
    PromptRecord {
        id,
        prompt,
        label: Some(label),
        source: Some("synthetic".to_string()),
        meta: Default::default(),
    }
}

/// Collapsed completion set: 2 to 4 templates, round-robin assignment, light
/// per-completion mutation. Round-robin keeps every template populated, so
/// each completion has close neighbors.
fn member_completions(rng: &mut ChaCha20Rng, opts: &SyntheticOptions, vocab: &[String]) -> Vec<String> {
    let template_count = rng.random_range(2..=4usize);
    let templates: Vec<Vec<String>> = (0..template_count)
        .map(|_| {
            let len = rng.random_range(opts.tokens_per_completion.saturating_sub(4)..=opts.tokens_per_completion);
            random_sequence(rng, vocab, len.max(1))
        })
        .collect();
    (0..opts.completions_per_prompt)
        .map(|j| mutate(rng, &templates[j % template_count], vocab, opts.mutation_rate).join(" "))
        .collect()
}

/// Mutually distant set: independent random sequences. Over a vocabulary of
/// hundreds of tokens, pairwise normalized distances sit near 1.
fn nonmember_completions(rng: &mut ChaCha20Rng, opts: &SyntheticOptions, vocab: &[String]) -> Vec<String> {
    (0..opts.completions_per_prompt)
        .map(|_| {
            let len = rng.random_range(opts.tokens_per_completion.saturating_sub(4)..=opts.tokens_per_completion);
            random_sequence(rng, vocab, len.max(1)).join(" ")
        })
        .collect()
}

/// Builds the labeled collapse benchmark: `member_count` collapsed prompts
/// followed by `nonmember_count` diverse ones.
pub fn collapse_benchmark(opts: &SyntheticOptions) -> SyntheticBenchmark {
    assert!(opts.completions_per_prompt >= 2, "need at least two completions per prompt");
    assert!(opts.vocab_size >= 2, "need a non-trivial vocabulary");
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let vocab = vocab(opts.vocab_size);
    let mut prompts = Vec::with_capacity(opts.member_count + opts.nonmember_count);
    for i in 0..opts.member_count {
        prompts.push(SyntheticPrompt {
            record: prompt_record(
                format!("member-{i:03}"),
                member_prompt_text(i),
                Label::Member,
            ),
            completions: member_completions(&mut rng, opts, &vocab),
        });
    }
    for i in 0..opts.nonmember_count {
        prompts.push(SyntheticPrompt {
            record: prompt_record(
                format!("nonmember-{i:03}"),
                nonmember_prompt_text(opts.member_count + i),
                Label::NonMember,
            ),
            completions: nonmember_completions(&mut rng, opts, &vocab),
        });
    }
    SyntheticBenchmark { prompts }
}

/// Completion set built from `groups` disjoint template groups,
/// `per_group` completions each, interleaved round-robin. Group vocabularies
/// share no tokens, so shared n-grams never cross groups; each completion
/// carries a unique two-token suffix that stays below any support threshold
/// of 2 or more.
pub fn structured_group_completions(groups: usize, per_group: usize, seed: u64) -> Vec<String> {
    assert!(groups >= 1 && per_group >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bases: Vec<Vec<String>> = (0..groups)
        .map(|g| {
            let len = rng.random_range(18..=24usize);
            (0..len).map(|_| format!("g{g}w{}", rng.random_range(0..40u32))).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(groups * per_group);
    for j in 0..per_group {
        for (g, base) in bases.iter().enumerate() {
            let idx = j * groups + g;
            let mut tokens = base.clone();
            tokens.push(format!("u{idx}p"));
            tokens.push(format!("u{idx}q"));
            out.push(tokens.join(" "));
        }
    }
    out
}
