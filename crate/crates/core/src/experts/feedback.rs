//! Score aggregation, thresholding and preference-pair construction.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const MODULE: &str = "experts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    W,
    L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertVerdict {
    pub candidate: usize,
    pub s_q: u8,
    pub s_c: f64,
    pub s_p: f64,
    pub aggregate: f64,
    pub label: Option<Label>,
}

impl ExpertVerdict {
    pub fn new(candidate: usize, s_q: u8, s_c: f64, s_p: f64) -> Self {
        Self {
            candidate,
            s_q,
            s_c,
            s_p,
            aggregate: 0.0,
            label: None,
        }
    }
}

/// Weights of the quality, compatibility and personalization channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertWeights {
    pub quality: f64,
    pub compatibility: f64,
    pub personalization: f64,
}

impl Default for ExpertWeights {
    fn default() -> Self {
        Self {
            quality: 1.0,
            compatibility: 1.0,
            personalization: 1.0,
        }
    }
}

/// Cosine similarity between a candidate encoding and the history condition.
pub fn personalization_score(v: &[f64], h: &[f64]) -> Result<f64> {
    check_dim(MODULE, v.len(), h.len())?;
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nh = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv == 0.0 || nh == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let c = v.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / (nv * nh);
    Ok(c.clamp(-1.0, 1.0))
}

/// Min-max normalization; a constant input maps to 0.5 everywhere.
pub fn minmax_norm(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Weighted sum of normalized channels, thresholded at the mean of this
/// candidate set. Strictly above the mean is a winner; ties lose.
pub fn aggregate_and_label(verdicts: &[ExpertVerdict], weights: &ExpertWeights) -> Result<Vec<ExpertVerdict>> {
    if verdicts.len() < 2 {
        return Err(Error::param(MODULE, "labeling needs at least two candidates"));
    }
    let q = minmax_norm(&verdicts.iter().map(|v| v.s_q as f64).collect::<Vec<_>>());
    let c = minmax_norm(&verdicts.iter().map(|v| v.s_c).collect::<Vec<_>>());
    let p = minmax_norm(&verdicts.iter().map(|v| v.s_p).collect::<Vec<_>>());
    let agg: Vec<f64> = (0..verdicts.len())
        .map(|j| weights.quality * q[j] + weights.compatibility * c[j] + weights.personalization * p[j])
        .collect();
    Ok(label_by_mean(verdicts, &agg))
}

fn label_by_mean(verdicts: &[ExpertVerdict], agg: &[f64]) -> Vec<ExpertVerdict> {
    let threshold = agg.iter().sum::<f64>() / agg.len() as f64;
    verdicts
        .iter()
        .zip(agg)
        .map(|(v, &a)| ExpertVerdict {
            aggregate: a,
            label: Some(if a > threshold { Label::W } else { Label::L }),
            ..v.clone()
        })
        .collect()
}

/// Labels from already normalized channel values (used by tests and
/// diagnostics): `channels[k][j]` is channel `k` for candidate `j`.
pub fn label_normalized(channels: [&[f64]; 3], weights: &ExpertWeights) -> Vec<Label> {
    let n = channels[0].len();
    let agg: Vec<f64> = (0..n)
        .map(|j| {
            weights.quality * channels[0][j]
                + weights.compatibility * channels[1][j]
                + weights.personalization * channels[2][j]
        })
        .collect();
    let stub: Vec<ExpertVerdict> = (0..n).map(|j| ExpertVerdict::new(j, 1, 0.0, 0.0)).collect();
    label_by_mean(&stub, &agg)
        .into_iter()
        .map(|v| v.label.expect("labeled"))
        .collect()
}

/// A winner/loser pair of candidate indices within one outfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
}

/// Every mixed pair among `a < b`, winner first, in ascending `(a, b)` order.
pub fn build_preference_pairs(labels: &[Label]) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            match (labels[a], labels[b]) {
                (Label::W, Label::L) => out.push(PreferencePair { winner: a, loser: b }),
                (Label::L, Label::W) => out.push(PreferencePair { winner: b, loser: a }),
                _ => {}
            }
        }
    }
    out
}

pub fn labels_of(verdicts: &[ExpertVerdict]) -> Result<Vec<Label>> {
    verdicts
        .iter()
        .map(|v| v.label.ok_or_else(|| Error::param(MODULE, "verdict has no label yet")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((personalization_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(personalization_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((personalization_score(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            personalization_score(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_norm(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_norm(&[5.0, 5.0, 5.0]), vec![0.5; 3]);
        assert_eq!(minmax_norm(&[3.0]), vec![0.5]);
    }

    #[test]
    fn tied_aggregates_all_lose() {
        let labels = label_normalized([&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]], &ExpertWeights::default());
        assert_eq!(labels, vec![Label::L, Label::L]);
        assert!(build_preference_pairs(&labels).is_empty());
    }

    #[test]
    fn distinct_aggregates_have_both_labels() {
        let vs: Vec<ExpertVerdict> = (0..7)
            .map(|j| ExpertVerdict::new(j, (j + 1) as u8, j as f64 * 0.3, (j as f64 * 0.7).sin()))
            .collect();
        let out = aggregate_and_label(&vs, &ExpertWeights::default()).unwrap();
        let labels = labels_of(&out).unwrap();
        assert!(labels.contains(&Label::W) && labels.contains(&Label::L));
    }

    #[test]
    fn quality_only_weights_follow_quality() {
        let vs: Vec<ExpertVerdict> = [3u8, 9, 5, 1]
            .iter()
            .enumerate()
            .map(|(j, &q)| ExpertVerdict::new(j, q, -(j as f64), j as f64))
            .collect();
        let w = ExpertWeights {
            quality: 1.0,
            compatibility: 0.0,
            personalization: 0.0,
        };
        // normalized quality: [0.25, 1, 0.5, 0]; mean 0.4375
        let labels = labels_of(&aggregate_and_label(&vs, &w).unwrap()).unwrap();
        assert_eq!(labels, vec![Label::L, Label::W, Label::W, Label::L]);
    }

    #[test]
    fn pair_counts() {
        use Label::*;
        let labels = [W, L, W, L, W, L, W];
        let pairs = build_preference_pairs(&labels);
        assert_eq!(pairs.len(), 12);
        assert!(pairs.iter().all(|p| labels[p.winner] == W && labels[p.loser] == L));
        assert!(build_preference_pairs(&[W; 7]).is_empty());
        assert!(aggregate_and_label(&[ExpertVerdict::new(0, 1, 0.0, 0.0)], &ExpertWeights::default()).is_err());
    }
}
