//! Membership scores over completion sets.
//!
//! The primary detector is the min-k nearest-neighbor distance: given m
//! sampled completions and their pairwise normalized distance matrix, take
//! each completion's distance to its nearest neighbor, sort those m values
//! ascending, and average the k smallest. Prompts the model was trained on
//! produce collapsed completion sets, so low scores indicate membership.
//!
//! Baselines: CDD (fraction of samples within `alpha` of the greedy
//! completion, higher means member), perplexity over prompt token logprobs
//! (lower means member), and min-k% (mean of the lowest fraction of prompt
//! token logprobs, higher means member).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{
    normalized_levenshtein, pairwise_distance_matrix_with, DistanceMatrix, DistanceOptions,
    UnitMode, UnitSequence,
};

/// Which direction of a score indicates training-set membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LowerMeansMember,
    HigherMeansMember,
}

/// Scoring method identifier, used in score records and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MinKnn,
    Cdd,
    Ppl,
    MinKPercent,
}

impl Method {
    pub fn orientation(self) -> Orientation {
        match self {
            Method::MinKnn | Method::Ppl => Orientation::LowerMeansMember,
            Method::Cdd | Method::MinKPercent => Orientation::HigherMeansMember,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MinKnn => "min-knn",
            Method::Cdd => "cdd",
            Method::Ppl => "ppl",
            Method::MinKPercent => "min-k-percent",
        }
    }

    pub const ALL: [Method; 4] = [Method::MinKnn, Method::Cdd, Method::Ppl, Method::MinKPercent];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min-knn" => Ok(Method::MinKnn),
            "cdd" => Ok(Method::Cdd),
            "ppl" => Ok(Method::Ppl),
            "min-k-percent" => Ok(Method::MinKPercent),
            other => Err(format!(
                "unknown method {other:?}, expected one of min-knn, cdd, ppl, min-k-percent"
            )),
        }
    }
}

/// Detector settings shared across prompts in one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// How many of the smallest nearest-neighbor distances to average.
    pub k: usize,
    pub unit_mode: UnitMode,
    /// Per-completion unit cap before distance computation; 0 disables.
    pub max_units: usize,
    /// CDD acceptance radius on normalized distance to the greedy completion.
    pub cdd_alpha: f64,
    /// Fraction of lowest prompt logprobs averaged by min-k%.
    pub min_k_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k: 10,
            unit_mode: UnitMode::Token,
            max_units: 4096,
            cdd_alpha: 0.05,
            min_k_fraction: 0.20,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.k == 0 {
            return Err(DetectorError::InvalidK { k: self.k, m: 0 });
        }
        if !(self.cdd_alpha.is_finite() && (0.0..=1.0).contains(&self.cdd_alpha)) {
            return Err(DetectorError::InvalidParameter {
                name: "cdd_alpha",
                value: self.cdd_alpha,
            });
        }
        if !(self.min_k_fraction.is_finite()
            && self.min_k_fraction > 0.0
            && self.min_k_fraction <= 1.0)
        {
            return Err(DetectorError::InvalidParameter {
                name: "min_k_fraction",
                value: self.min_k_fraction,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("need at least 2 completions for nearest-neighbor distances, got {m}")]
    TooFewSamples { m: usize },
    #[error("k = {k} is invalid for a set of {m} completions (need 1 <= k <= m)")]
    InvalidK { k: usize, m: usize },
    #[error("CDD needs at least one sampled completion")]
    EmptySamples,
    #[error("no logprobs available")]
    EmptyLogprobs,
    #[error("logprob at index {index} is {value}, expected <= 0")]
    PositiveLogprob { index: usize, value: f64 },
    #[error("{name} = {value} is out of range")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// One method's score for one prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionScore {
    pub prompt_id: String,
    pub method: Method,
    pub score: f64,
    pub orientation: Orientation,
    /// Completions actually scored (for logprob methods, tokens used).
    pub m_used: usize,
    /// k actually averaged; only set for min-knn.
    pub k_used: Option<usize>,
}

/// Hard membership call from a thresholded score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Member,
    NonMember,
}

/// Each completion's distance to its nearest neighbor, sorted ascending.
pub fn nearest_neighbor_distances(matrix: &DistanceMatrix) -> Result<Vec<f64>, DetectorError> {
    let m = matrix.m();
    if m < 2 {
        return Err(DetectorError::TooFewSamples { m });
    }
    let mut nn = Vec::with_capacity(m);
    for i in 0..m {
        let mut best = f64::INFINITY;
        for j in 0..m {
            if j != i {
                best = best.min(matrix.get(i, j));
            }
        }
        nn.push(best);
    }
    nn.sort_by(f64::total_cmp);
    Ok(nn)
}

/// Mean of the k smallest nearest-neighbor distances.
pub fn min_knn_from_matrix(matrix: &DistanceMatrix, k: usize) -> Result<f64, DetectorError> {
    let nn = nearest_neighbor_distances(matrix)?;
    if k == 0 || k > nn.len() {
        return Err(DetectorError::InvalidK { k, m: nn.len() });
    }
    Ok(nn[..k].iter().sum::<f64>() / k as f64)
}

fn distance_options(config: &DetectorConfig) -> DistanceOptions {
    DistanceOptions {
        unit_mode: config.unit_mode,
        max_units: config.max_units,
        banded: true,
    }
}

/// Min-knn score for one prompt's sampled completions.
pub fn min_knn_score(
    prompt_id: &str,
    completions: &[String],
    config: &DetectorConfig,
) -> Result<DetectionScore, DetectorError> {
    let m = completions.len();
    if m < 2 {
        return Err(DetectorError::TooFewSamples { m });
    }
    if config.k == 0 || config.k > m {
        return Err(DetectorError::InvalidK { k: config.k, m });
    }
    let matrix = pairwise_distance_matrix_with(completions, &distance_options(config));
    let score = min_knn_from_matrix(&matrix, config.k)?;
    Ok(DetectionScore {
        prompt_id: prompt_id.to_string(),
        method: Method::MinKnn,
        score,
        orientation: Orientation::LowerMeansMember,
        m_used: m,
        k_used: Some(config.k),
    })
}

/// CDD baseline: fraction of samples whose normalized distance to the greedy
/// completion is at most `cdd_alpha`.
pub fn cdd_score(
    prompt_id: &str,
    greedy: &str,
    samples: &[String],
    config: &DetectorConfig,
) -> Result<DetectionScore, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::EmptySamples);
    }
    let cap = config.max_units;
    let g = UnitSequence::new(greedy, config.unit_mode, cap);
    let close = samples
        .iter()
        .filter(|s| {
            let s = UnitSequence::new(s, config.unit_mode, cap);
            normalized_levenshtein(&g, &s) <= config.cdd_alpha
        })
        .count();
    Ok(DetectionScore {
        prompt_id: prompt_id.to_string(),
        method: Method::Cdd,
        score: close as f64 / samples.len() as f64,
        orientation: Orientation::HigherMeansMember,
        m_used: samples.len(),
        k_used: None,
    })
}

fn check_logprobs(logprobs: &[f64]) -> Result<(), DetectorError> {
    if logprobs.is_empty() {
        return Err(DetectorError::EmptyLogprobs);
    }
    for (index, &value) in logprobs.iter().enumerate() {
        if value.is_nan() || value > 0.0 {
            return Err(DetectorError::PositiveLogprob { index, value });
        }
    }
    Ok(())
}

/// Perplexity baseline: `exp(-mean(logprobs))` over prompt token logprobs.
pub fn ppl_score(prompt_id: &str, logprobs: &[f64]) -> Result<DetectionScore, DetectorError> {
    check_logprobs(logprobs)?;
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(DetectionScore {
        prompt_id: prompt_id.to_string(),
        method: Method::Ppl,
        score: (-mean).exp(),
        orientation: Orientation::LowerMeansMember,
        m_used: logprobs.len(),
        k_used: None,
    })
}

/// Min-k% baseline: mean of the `ceil(fraction * n)` lowest logprobs.
pub fn min_k_percent_score(
    prompt_id: &str,
    logprobs: &[f64],
    fraction: f64,
) -> Result<DetectionScore, DetectorError> {
    check_logprobs(logprobs)?;
    if !(fraction.is_finite() && fraction > 0.0 && fraction <= 1.0) {
        return Err(DetectorError::InvalidParameter { name: "min_k_fraction", value: fraction });
    }
    let n = logprobs.len();
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = logprobs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted[..count].iter().sum::<f64>() / count as f64;
    Ok(DetectionScore {
        prompt_id: prompt_id.to_string(),
        method: Method::MinKPercent,
        score: mean,
        orientation: Orientation::HigherMeansMember,
        m_used: n,
        k_used: None,
    })
}

/// Thresholds a score into a decision. The boundary counts as the member
/// side regardless of orientation. `threshold` must be finite.
pub fn classify(score: &DetectionScore, threshold: f64) -> Decision {
    assert!(threshold.is_finite(), "classification threshold must be finite");
    let member = match score.orientation {
        Orientation::LowerMeansMember => score.score <= threshold,
        Orientation::HigherMeansMember => score.score >= threshold,
    };
    if member {
        Decision::Member
    } else {
        Decision::NonMember
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::pairwise_distance_matrix;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn char_config(k: usize) -> DetectorConfig {
        DetectorConfig { k, unit_mode: UnitMode::Char, ..DetectorConfig::default() }
    }

    #[test]
    fn nn_distances_match_frozen_example() {
        let m = pairwise_distance_matrix(&strs(&["abc", "abd", "xyz"]), UnitMode::Char);
        let nn = nearest_neighbor_distances(&m).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(nn.len(), 3);
        assert!((nn[0] - third).abs() < 1e-15);
        assert!((nn[1] - third).abs() < 1e-15);
        assert!((nn[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn min_knn_matches_frozen_example() {
        let comps = strs(&["abc", "abd", "xyz"]);
        let s2 = min_knn_score("p", &comps, &char_config(2)).unwrap();
        assert!((s2.score - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s2.k_used, Some(2));
        assert_eq!(s2.m_used, 3);
        assert_eq!(s2.orientation, Orientation::LowerMeansMember);
        let s3 = min_knn_score("p", &comps, &char_config(3)).unwrap();
        assert!((s3.score - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn min_knn_rejects_bad_shapes() {
        let comps = strs(&["abc", "abd", "xyz"]);
        assert!(matches!(
            min_knn_score("p", &comps, &char_config(4)),
            Err(DetectorError::InvalidK { k: 4, m: 3 })
        ));
        assert!(matches!(
            min_knn_score("p", &comps, &char_config(0)),
            Err(DetectorError::InvalidK { .. })
        ));
        assert!(matches!(
            min_knn_score("p", &strs(&["only"]), &char_config(1)),
            Err(DetectorError::TooFewSamples { m: 1 })
        ));
    }

    #[test]
    fn identical_set_scores_zero() {
        let comps = strs(&["same answer", "same answer", "same answer"]);
        let s = min_knn_score("p", &comps, &DetectorConfig { k: 3, ..Default::default() }).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn cdd_matches_frozen_example() {
        let s = cdd_score("p", "abc", &strs(&["abc", "abd", "xyz"]), &char_config(1)).unwrap();
        assert!((s.score - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.orientation, Orientation::HigherMeansMember);
    }

    #[test]
    fn cdd_boundary_is_inclusive() {
        let config = DetectorConfig {
            cdd_alpha: 1.0 / 3.0,
            ..char_config(1)
        };
        let s = cdd_score("p", "abc", &strs(&["abd"]), &config).unwrap();
        assert_eq!(s.score, 1.0);
    }

    #[test]
    fn cdd_rejects_empty_samples() {
        assert!(matches!(
            cdd_score("p", "abc", &[], &char_config(1)),
            Err(DetectorError::EmptySamples)
        ));
    }

    #[test]
    fn ppl_matches_frozen_examples() {
        let e = std::f64::consts::E;
        let s = ppl_score("p", &[-1.0, -1.0, -1.0]).unwrap();
        assert!((s.score - e).abs() < 1e-12);
        let s = ppl_score("p", &[-2.0, -4.0]).unwrap();
        assert!((s.score - e.powi(3)).abs() < 1e-10);
        let s = ppl_score("p", &[0.0, 0.0]).unwrap();
        assert_eq!(s.score, 1.0);
        assert_eq!(s.orientation, Orientation::LowerMeansMember);
    }

    #[test]
    fn ppl_rejects_bad_inputs() {
        assert!(matches!(ppl_score("p", &[]), Err(DetectorError::EmptyLogprobs)));
        assert!(matches!(
            ppl_score("p", &[-1.0, 0.5]),
            Err(DetectorError::PositiveLogprob { index: 1, .. })
        ));
        assert!(matches!(
            ppl_score("p", &[f64::NAN]),
            Err(DetectorError::PositiveLogprob { index: 0, .. })
        ));
    }

    #[test]
    fn min_k_percent_matches_frozen_examples() {
        let s = min_k_percent_score("p", &[-5.0, -1.0, -1.0, -1.0], 0.25).unwrap();
        assert_eq!(s.score, -5.0);
        let s = min_k_percent_score("p", &[-3.0, -1.0], 1.0).unwrap();
        assert_eq!(s.score, -2.0);
        assert_eq!(s.orientation, Orientation::HigherMeansMember);
    }

    #[test]
    fn min_k_percent_ceil_rounding() {
        // 0.5 of 3 tokens rounds up to 2.
        let s = min_k_percent_score("p", &[-4.0, -2.0, -1.0], 0.5).unwrap();
        assert_eq!(s.score, -3.0);
    }

    #[test]
    fn classify_boundary_goes_to_member() {
        let mut s = DetectionScore {
            prompt_id: "p".into(),
            method: Method::MinKnn,
            score: 0.3,
            orientation: Orientation::LowerMeansMember,
            m_used: 32,
            k_used: Some(10),
        };
        assert_eq!(classify(&s, 0.3), Decision::Member);
        assert_eq!(classify(&s, 0.29), Decision::NonMember);
        s.orientation = Orientation::HigherMeansMember;
        assert_eq!(classify(&s, 0.3), Decision::Member);
        assert_eq!(classify(&s, 0.31), Decision::NonMember);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut c = DetectorConfig::default();
        assert!(c.validate().is_ok());
        c.cdd_alpha = 1.5;
        assert!(c.validate().is_err());
        c = DetectorConfig { min_k_fraction: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = DetectorConfig { k: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_string_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("knn".parse::<Method>().is_err());
        let json = serde_json::to_string(&Method::MinKPercent).unwrap();
        assert_eq!(json, "\"min-k-percent\"");
    }
}
