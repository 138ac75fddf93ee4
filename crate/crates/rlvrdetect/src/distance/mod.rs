//! Unit segmentation, Levenshtein distances, and pairwise distance matrices.
//!
//! Distances are computed over *units*: either whitespace tokens (default;
//! robust to formatting noise in model output) or Unicode scalar values.
//! Normalization divides the raw edit count by the longer sequence's unit
//! length, giving values in `[0, 1]` where 0 is identical and 1 is maximally
//! different. Two empty sequences are identical by convention (0.0).
//!
//! The pairwise matrix is the hot path: scoring one prompt at the default
//! settings means m = 32 completions of up to 4096 units, i.e. 496 pairwise
//! DPs. The implementation trims common affixes, computes one full anchor
//! row, and bands every remaining pair by the triangle-inequality bound
//! `d(i, j) <= d(0, i) + d(0, j)`, falling back to the full DP if a band is
//! ever exceeded. Results are exact integers before normalization, so the
//! matrix is deterministic regardless of thread count.

mod kernel;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// What a distance unit is: one whitespace token or one Unicode scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    #[default]
    Token,
    Char,
}

impl fmt::Display for UnitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitMode::Token => "token",
            UnitMode::Char => "char",
        })
    }
}

impl FromStr for UnitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(UnitMode::Token),
            "char" => Ok(UnitMode::Char),
            other => Err(format!("unknown unit mode {other:?}, expected \"token\" or \"char\"")),
        }
    }
}

enum UnitStore {
    Chars(Vec<u32>),
    Tokens(Vec<String>),
}

/// A text segmented into comparison units, possibly truncated to a cap.
pub struct UnitSequence {
    mode: UnitMode,
    units: UnitStore,
    truncated: bool,
}

impl UnitSequence {
    /// Segments `text` under `mode`, keeping at most `max_units` units.
    /// `max_units == 0` means no cap.
    pub fn new(text: &str, mode: UnitMode, max_units: usize) -> Self {
        let cap = if max_units == 0 { usize::MAX } else { max_units };
        let (units, truncated) = match mode {
            UnitMode::Char => {
                let mut out = Vec::new();
                let mut cut = false;
                for (i, c) in text.chars().enumerate() {
                    if i >= cap {
                        cut = true;
                        break;
                    }
                    out.push(c as u32);
                }
                (UnitStore::Chars(out), cut)
            }
            UnitMode::Token => {
                let toks = crate::text::whitespace_tokens(text);
                let cut = toks.len() > cap;
                let kept = toks
                    .into_iter()
                    .take(cap)
                    .map(str::to_owned)
                    .collect::<Vec<_>>();
                (UnitStore::Tokens(kept), cut)
            }
        };
        UnitSequence { mode, units, truncated }
    }

    pub fn mode(&self) -> UnitMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        match &self.units {
            UnitStore::Chars(v) => v.len(),
            UnitStore::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the source text had more units than the cap.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Exact edit distance between two sequences of the same unit mode.
///
/// Panics if the modes differ; comparing a token sequence against a char
/// sequence is a programming error, not a data condition.
pub fn levenshtein(a: &UnitSequence, b: &UnitSequence) -> usize {
    assert_eq!(
        a.mode, b.mode,
        "cannot compare sequences with different unit modes"
    );
    match (&a.units, &b.units) {
        (UnitStore::Chars(x), UnitStore::Chars(y)) => kernel::edit_distance(x, y),
        (UnitStore::Tokens(x), UnitStore::Tokens(y)) => {
            let mut intern: HashMap<&str, u32> = HashMap::new();
            let xi = intern_ids(&mut intern, x);
            let yi = intern_ids(&mut intern, y);
            kernel::edit_distance(&xi, &yi)
        }
        _ => unreachable!("mode equality checked above"),
    }
}

/// Maps tokens to dense u32 ids, extending the interner for unseen tokens.
fn intern_ids<'a>(intern: &mut HashMap<&'a str, u32>, toks: &'a [String]) -> Vec<u32> {
    toks.iter()
        .map(|t| {
            let next = intern.len() as u32;
            *intern.entry(t.as_str()).or_insert(next)
        })
        .collect()
}

/// Edit distance divided by the longer sequence's unit length.
///
/// Both sequences empty yields 0.0 (identical by convention). The result is
/// always in `[0, 1]`.
pub fn normalized_levenshtein(a: &UnitSequence, b: &UnitSequence) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / denom as f64
}

/// Knobs for pairwise matrix construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceOptions {
    pub unit_mode: UnitMode,
    /// Per-text unit cap; 0 disables truncation.
    pub max_units: usize,
    /// Debugging escape hatch: `false` forces the plain full DP for every
    /// pair. Results are identical either way.
    pub banded: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            unit_mode: UnitMode::Token,
            max_units: 4096,
            banded: true,
        }
    }
}

/// Symmetric matrix of normalized distances over one completion set.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    m: usize,
    unit_mode: UnitMode,
    values: Vec<f64>,
    truncated: Vec<bool>,
}

impl DistanceMatrix {
    /// Number of completions (rows).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn unit_mode(&self) -> UnitMode {
        self.unit_mode
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.m && j < self.m, "index out of range");
        self.values[i * self.m + j]
    }

    /// Per-completion truncation flags, index-aligned with the input texts.
    pub fn truncated_flags(&self) -> &[bool] {
        &self.truncated
    }

    pub fn any_truncated(&self) -> bool {
        self.truncated.iter().any(|&t| t)
    }

    /// Row-major copy, mostly for rendering and tests.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|i| self.values[i * self.m..(i + 1) * self.m].to_vec())
            .collect()
    }
}

fn intern_set(texts: &[String], opts: &DistanceOptions) -> (Vec<Vec<u32>>, Vec<bool>) {
    let cap = if opts.max_units == 0 { usize::MAX } else { opts.max_units };
    let mut intern: HashMap<String, u32> = HashMap::new();
    let mut seqs = Vec::with_capacity(texts.len());
    let mut flags = Vec::with_capacity(texts.len());
    for text in texts {
        match opts.unit_mode {
            UnitMode::Char => {
                let mut ids = Vec::new();
                let mut cut = false;
                for (i, c) in text.chars().enumerate() {
                    if i >= cap {
                        cut = true;
                        break;
                    }
                    ids.push(c as u32);
                }
                seqs.push(ids);
                flags.push(cut);
            }
            UnitMode::Token => {
                let toks = crate::text::whitespace_tokens(text);
                flags.push(toks.len() > cap);
                let ids = toks
                    .into_iter()
                    .take(cap)
                    .map(|t| {
                        let next = intern.len() as u32;
                        *intern.entry(t.to_owned()).or_insert(next)
                    })
                    .collect();
                seqs.push(ids);
            }
        }
    }
    (seqs, flags)
}

/// Pairwise normalized distance matrix with default options (token mode,
/// 4096-unit cap).
pub fn pairwise_distance_matrix(completions: &[String], unit_mode: UnitMode) -> DistanceMatrix {
    pairwise_distance_matrix_with(
        completions,
        &DistanceOptions { unit_mode, ..DistanceOptions::default() },
    )
}

/// Pairwise normalized distance matrix with explicit options.
pub fn pairwise_distance_matrix_with(
    completions: &[String],
    opts: &DistanceOptions,
) -> DistanceMatrix {
    let m = completions.len();
    let (seqs, truncated) = intern_set(completions, opts);
    let mut raw = vec![0usize; m * m];

    if m > 1 {
        // Anchor row: exact distances from completion 0 to everything else.
        let anchor: Vec<usize> = (1..m)
            .into_par_iter()
            .map(|j| kernel::edit_distance(&seqs[0], &seqs[j]))
            .collect();
        for (j, &d) in anchor.iter().enumerate() {
            raw[j + 1] = d;
            raw[(j + 1) * m] = d;
        }

        // Remaining pairs, banded by the triangle-inequality upper bound
        // through the anchor. The bound is a true upper bound, so the banded
        // kernel returns Some for every pair; the full-DP fallback is pure
        // defense.
        let pairs: Vec<(usize, usize)> = (1..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .collect();
        let dists: Vec<usize> = pairs
            .par_iter()
            .map(|&(i, j)| {
                if opts.banded {
                    let bound = raw[i] + raw[j];
                    kernel::edit_distance_bounded(&seqs[i], &seqs[j], bound)
                        .unwrap_or_else(|| kernel::edit_distance(&seqs[i], &seqs[j]))
                } else {
                    kernel::edit_distance(&seqs[i], &seqs[j])
                }
            })
            .collect();
        for (&(i, j), &d) in pairs.iter().zip(&dists) {
            raw[i * m + j] = d;
            raw[j * m + i] = d;
        }
    }

    let mut values = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let denom = seqs[i].len().max(seqs[j].len());
            values[i * m + j] = if denom == 0 {
                0.0
            } else {
                raw[i * m + j] as f64 / denom as f64
            };
        }
    }

    DistanceMatrix { m, unit_mode: opts.unit_mode, values, truncated }
}
