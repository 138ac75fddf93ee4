//! Hierarchical agglomerative clustering over binary n-gram presence
//! vectors.
//!
//! The scale is small (m completions, m <= a few hundred), so this is the
//! naive O(m^3) agglomeration with Lance-Williams updates rather than a
//! nearest-neighbor-chain scheme. What matters here is exact, reproducible
//! behavior: items are first sorted by feature-vector content so results are
//! invariant to completion order (identical vectors are interchangeable and
//! always co-cluster at distance zero), and tie-breaking scans pairs in a
//! fixed order.

use serde::{Deserialize, Serialize};

use crate::text::whitespace_tokens;

/// Cluster-to-cluster distance update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl std::str::FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(format!(
                "unknown linkage {other:?}, expected average, single, or complete"
            )),
        }
    }
}

/// Distance between binary presence vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMetric {
    #[default]
    Jaccard,
    Dice,
}

impl std::str::FromStr for ClusterMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jaccard" => Ok(ClusterMetric::Jaccard),
            "dice" => Ok(ClusterMetric::Dice),
            other => Err(format!("unknown metric {other:?}, expected jaccard or dice")),
        }
    }
}

/// Clustering configuration, recorded in rigidity profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub linkage: Linkage,
    pub metric: ClusterMetric,
    /// Dendrogram cut: merging stops once the closest pair is farther than
    /// this.
    pub threshold: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            linkage: Linkage::Average,
            metric: ClusterMetric::Jaccard,
            threshold: 0.5,
        }
    }
}

/// Flat clustering of one completion set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    pub cluster_count: usize,
    /// Per-completion cluster index, contiguous from 0, labeled in order of
    /// first appearance.
    pub assignment: Vec<usize>,
    /// True when there were no features and every completion was left as a
    /// singleton.
    pub degenerate: bool,
}

fn pair_distance(a: &[bool], b: &[bool], metric: ClusterMetric) -> f64 {
    let mut intersection = 0usize;
    let mut a_count = 0usize;
    let mut b_count = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        a_count += usize::from(x);
        b_count += usize::from(y);
        intersection += usize::from(x && y);
    }
    match metric {
        ClusterMetric::Jaccard => {
            let union = a_count + b_count - intersection;
            // Two all-zero vectors are identical, not maximally distant.
            if union == 0 {
                0.0
            } else {
                1.0 - intersection as f64 / union as f64
            }
        }
        ClusterMetric::Dice => {
            let denom = a_count + b_count;
            if denom == 0 {
                0.0
            } else {
                1.0 - 2.0 * intersection as f64 / denom as f64
            }
        }
    }
}

/// Clusters completions by their binary presence vectors over `ngrams`.
///
/// With empty `ngrams` there is nothing to compare: every completion becomes
/// its own cluster and the degenerate flag is set. The partition (as a set
/// partition of completions) is invariant to completion reordering.
pub fn structure_clusters(
    completions: &[String],
    ngrams: &[String],
    opts: &ClusterOptions,
) -> ClusterResult {
    assert!(
        opts.threshold.is_finite() && opts.threshold >= 0.0,
        "cluster cut threshold must be finite and non-negative"
    );
    let m = completions.len();
    if m == 0 {
        return ClusterResult { cluster_count: 0, assignment: Vec::new(), degenerate: false };
    }
    if ngrams.is_empty() {
        return ClusterResult {
            cluster_count: m,
            assignment: (0..m).collect(),
            degenerate: true,
        };
    }

    let gram_tokens: Vec<Vec<&str>> = ngrams.iter().map(|g| whitespace_tokens(g)).collect();
    let vectors: Vec<Vec<bool>> = completions
        .iter()
        .map(|completion| {
            let tokens = whitespace_tokens(completion);
            gram_tokens
                .iter()
                .map(|gram| {
                    !gram.is_empty()
                        && tokens.len() >= gram.len()
                        && tokens.windows(gram.len()).any(|w| w == gram.as_slice())
                })
                .collect()
        })
        .collect();

    // Canonical item order: sort by vector content. Completion order then
    // has no influence on merge order, so partitions are reorder-invariant.
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&a, &b| vectors[a].cmp(&vectors[b]));

    // Active clusters: parallel arrays of member lists (canonical positions)
    // and sizes, plus a condensed distance matrix between active clusters.
    let mut members: Vec<Vec<usize>> = (0..m).map(|c| vec![c]).collect();
    let mut dist = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = pair_distance(&vectors[perm[i]], &vectors[perm[j]], opts.metric);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut active: Vec<usize> = (0..m).collect();

    while active.len() > 1 {
        let mut best = f64::INFINITY;
        let mut best_pair = (0usize, 0usize);
        for (ai, &ci) in active.iter().enumerate() {
            for &cj in &active[(ai + 1)..] {
                if dist[ci][cj] < best {
                    best = dist[ci][cj];
                    best_pair = (ci, cj);
                }
            }
        }
        if best > opts.threshold {
            break;
        }
        let (ci, cj) = best_pair;
        let (si, sj) = (members[ci].len() as f64, members[cj].len() as f64);
        for &ck in &active {
            if ck == ci || ck == cj {
                continue;
            }
            let updated = match opts.linkage {
                Linkage::Average => (si * dist[ci][ck] + sj * dist[cj][ck]) / (si + sj),
                Linkage::Single => dist[ci][ck].min(dist[cj][ck]),
                Linkage::Complete => dist[ci][ck].max(dist[cj][ck]),
            };
            dist[ci][ck] = updated;
            dist[ck][ci] = updated;
        }
        let absorbed = std::mem::take(&mut members[cj]);
        members[ci].extend(absorbed);
        active.retain(|&c| c != cj);
    }

    // Map cluster slots back through the permutation, then relabel so
    // indices are contiguous and ordered by first appearance.
    let mut raw = vec![usize::MAX; m];
    for (slot, &cluster) in active.iter().enumerate() {
        for &canonical in &members[cluster] {
            raw[perm[canonical]] = slot;
        }
    }
    let mut relabel: Vec<Option<usize>> = vec![None; active.len()];
    let mut next = 0usize;
    let mut assignment = Vec::with_capacity(m);
    for &slot in &raw {
        let label = *relabel[slot].get_or_insert_with(|| {
            let label = next;
            next += 1;
            label
        });
        assignment.push(label);
    }

    ClusterResult { cluster_count: active.len(), assignment, degenerate: false }
}
