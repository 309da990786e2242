//! Score-norm anomaly detection: the decision function is the squared score
//! norm `||grad_x E(x)||^2` (large where the energy landscape has no nearby
//! critical point), thresholded at an assumed contamination rate or ranked
//! into a precision-recall curve.

use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::nn::{EnergyFunction, SampleBatch};
use crate::scalar::Scalar;

/// Per-sample decision scores with optional ground truth (true = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScoreSet {
    pub scores: Vec<f64>,
    pub labels: Option<Vec<bool>>,
    /// Samples dropped because their gradient was non-finite.
    pub excluded_nonfinite: usize,
}

impl AnomalyScoreSet {
    pub fn with_labels(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(MegError::protocol(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Ok(AnomalyScoreSet { scores, labels: Some(labels), excluded_nonfinite: 0 })
    }

    fn labels(&self) -> Result<&[bool]> {
        self.labels
            .as_deref()
            .ok_or_else(|| MegError::protocol("this evaluation needs ground-truth labels".to_string()))
    }
}

/// Squared score norm per row. Rows with non-finite gradients are excluded
/// and counted rather than failing the whole batch.
pub fn score_samples<F: Scalar>(
    energy: &EnergyFunction<F>,
    x: &SampleBatch<F>,
    labels: Option<&[bool]>,
) -> Result<AnomalyScoreSet> {
    if let Some(l) = labels {
        if l.len() != x.len() {
            return Err(MegError::protocol(format!("{} labels for {} samples", l.len(), x.len())));
        }
    }
    // Row-wise gradient without the batch-level finiteness gate; per-row
    // faults are recoverable here.
    let grad = energy.net.input_gradient(x.values());
    let mut scores = Vec::with_capacity(x.len());
    let mut kept_labels = labels.map(|_| Vec::with_capacity(x.len()));
    let mut excluded = 0usize;
    for (i, row) in grad.rows().into_iter().enumerate() {
        let mut s = 0.0f64;
        let mut finite = true;
        for &g in row.iter() {
            let g = g.to_f64();
            if !g.is_finite() {
                finite = false;
                break;
            }
            s += g * g;
        }
        if finite {
            scores.push(s);
            if let (Some(kept), Some(l)) = (kept_labels.as_mut(), labels) {
                kept.push(l[i]);
            }
        } else {
            excluded += 1;
        }
    }
    Ok(AnomalyScoreSet { scores, labels: kept_labels, excluded_nonfinite: excluded })
}

/// Threshold metrics at an assumed contamination rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub contamination_rate: f64,
    /// Set when no positive labels exist; the zeros are then conventions,
    /// not measurements.
    pub degenerate: bool,
}

/// Predicts the top `ceil(contamination * N)` scores as anomalous and scores
/// the prediction against the labels.
pub fn evaluate_prf1_at_rate(s: &AnomalyScoreSet, contamination: f64) -> Result<Prf1Report> {
    let labels = s.labels()?;
    if !(contamination > 0.0 && contamination < 1.0) {
        return Err(MegError::config("contamination must lie strictly between 0 and 1"));
    }
    let n = s.scores.len();
    if n == 0 {
        return Err(MegError::protocol("cannot evaluate an empty score set"));
    }
    let k = ((contamination * n as f64).ceil() as usize).clamp(1, n);

    // Rank by score descending; ties broken by original index for
    // determinism.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]).then(a.cmp(&b)));
    let threshold = s.scores[order[k - 1]];

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (rank, &idx) in order.iter().enumerate() {
        let predicted = rank < k;
        match (predicted, labels[idx]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let positives = tp + fn_;
    let degenerate = positives == 0;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if degenerate { 0.0 } else { tp as f64 / positives as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf1Report { precision, recall, f1, threshold, contamination_rate: contamination, degenerate })
}

/// Area under the precision-recall curve by step-wise summation over distinct
/// score thresholds (equal scores are grouped, no interpolation).
pub fn auprc(s: &AnomalyScoreSet) -> Result<f64> {
    let labels = s.labels()?;
    let n = s.scores.len();
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    if total_pos == 0.0 {
        return Err(MegError::protocol("AUPRC needs at least one positive label"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));

    let mut area = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < n {
        // Consume the whole tie group before evaluating the operating point.
        let score = s.scores[order[i]];
        while i < n && s.scores[order[i]] == score {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn random_energy(d: usize, seed: u64) -> EnergyFunction<f64> {
        EnergyFunction::init(
            d,
            &NetworkSpec::new(vec![8], Activation::Softplus),
            &mut stream(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn constant_energy_scores_zero() {
        let mut e = random_energy(2, 1);
        e.net.layers.last_mut().unwrap().weights.fill(0.0);
        e.net.layers.last_mut().unwrap().bias.fill(7.0);
        let x = SampleBatch::new(array![[0.3, -0.4], [2.0, 2.0]]).unwrap();
        let s = score_samples(&e, &x, None).unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0]);
        assert_eq!(s.excluded_nonfinite, 0);
    }

    #[test]
    fn scores_match_finite_difference_gradient_norms() {
        let e = random_energy(3, 2);
        let x = SampleBatch::new(array![[0.2, -0.7, 0.5], [1.0, 0.1, -0.2]]).unwrap();
        let s = score_samples(&e, &x, None).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut fd_norm = 0.0;
            for j in 0..x.dim() {
                let mut xp = x.values().clone();
                let mut xm = x.values().clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let ep = e.energy(&SampleBatch::new(xp).unwrap()).unwrap()[i];
                let em = e.energy(&SampleBatch::new(xm).unwrap()).unwrap()[i];
                let g = (ep - em) / (2.0 * h);
                fd_norm += g * g;
            }
            assert_relative_eq!(s.scores[i], fd_norm, max_relative = 1e-3);
        }
    }

    #[test]
    fn scores_invariant_under_constant_energy_shift() {
        let e = random_energy(2, 3);
        let x = SampleBatch::new(array![[0.5, 0.5], [-1.0, 0.3]]).unwrap();
        let a = score_samples(&e, &x, None).unwrap();
        let mut shifted = e.clone();
        shifted.net.layers.last_mut().unwrap().bias.mapv_inplace(|b| b + 123.0);
        let b = score_samples(&shifted, &x, None).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn prf1_perfect_separation() {
        let s = AnomalyScoreSet::with_labels(
            vec![0.9, 0.8, 0.2, 0.1],
            vec![true, true, false, false],
        )
        .unwrap();
        let r = evaluate_prf1_at_rate(&s, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(r.threshold >= 0.2 && r.threshold <= 0.8, "threshold {}", r.threshold);
        assert!(!r.degenerate);
    }

    #[test]
    fn prf1_no_positives_is_flagged() {
        let s = AnomalyScoreSet::with_labels(vec![0.5, 0.4], vec![false, false]).unwrap();
        let r = evaluate_prf1_at_rate(&s, 0.5).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn prf1_missing_labels_is_protocol_error() {
        let s = AnomalyScoreSet { scores: vec![1.0], labels: None, excluded_nonfinite: 0 };
        assert!(matches!(evaluate_prf1_at_rate(&s, 0.5), Err(MegError::Protocol(_))));
    }

    #[test]
    fn prf1_random_scores_balanced_labels() {
        // Independent scores, balanced labels, rate 0.5: F1 -> 0.5.
        let n = 10_000;
        let mut rng = stream(4, 0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let s = AnomalyScoreSet::with_labels(scores, labels).unwrap();
        let r = evaluate_prf1_at_rate(&s, 0.5).unwrap();
        assert!((r.f1 - 0.5).abs() < 0.02, "F1 = {}", r.f1);
    }

    #[test]
    fn prf1_rate_matching_true_rate_with_perfect_ranking() {
        let n = 1000;
        let n_pos = 200;
        let scores: Vec<f64> = (0..n).map(|i| if i < n_pos { 10.0 + i as f64 } else { i as f64 / n as f64 }).collect();
        let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
        let s = AnomalyScoreSet::with_labels(scores, labels).unwrap();
        let r = evaluate_prf1_at_rate(&s, 0.2).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn auprc_perfect_and_single_positive() {
        let s = AnomalyScoreSet::with_labels(vec![0.9, 0.7, 0.3], vec![true, true, false]).unwrap();
        assert_relative_eq!(auprc(&s).unwrap(), 1.0);

        // Single positive ranked first of N.
        let n = 50;
        let mut scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        scores[0] = 1.0;
        let mut labels = vec![false; n];
        labels[0] = true;
        let s = AnomalyScoreSet::with_labels(scores, labels).unwrap();
        assert_relative_eq!(auprc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auprc_random_scores_approach_positive_rate() {
        let n = 100_000;
        let pi = 0.3;
        let mut rng = stream(5, 0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < pi).collect();
        let s = AnomalyScoreSet::with_labels(scores, labels).unwrap();
        let a = auprc(&s).unwrap();
        assert!((a - pi).abs() < 0.01, "AUPRC = {a}, positive rate = {pi}");
    }

    #[test]
    fn auprc_invariant_under_monotone_transform() {
        let mut rng = stream(6, 0);
        let scores: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let labels: Vec<bool> = (0..500).map(|_| rng.random::<f64>() < 0.4).collect();
        let s1 = AnomalyScoreSet::with_labels(scores.clone(), labels.clone()).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&v| (3.0 * v).exp()).collect();
        let s2 = AnomalyScoreSet::with_labels(transformed, labels).unwrap();
        assert_relative_eq!(auprc(&s1).unwrap(), auprc(&s2).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn auprc_no_positives_is_protocol_error() {
        let s = AnomalyScoreSet::with_labels(vec![1.0, 0.5], vec![false, false]).unwrap();
        assert!(matches!(auprc(&s), Err(MegError::Protocol(_))));
    }

    #[test]
    fn auprc_tie_grouping() {
        // All scores equal: the single operating point has precision = pi,
        // recall = 1, so the area equals pi exactly.
        let labels = vec![true, false, false, true, false];
        let s = AnomalyScoreSet::with_labels(vec![1.0; 5], labels).unwrap();
        assert_relative_eq!(auprc(&s).unwrap(), 0.4);
    }

    #[test]
    fn non_finite_rows_are_excluded_with_count() {
        // An energy with a weight so large that inputs overflow f64 is hard
        // to build; emulate by injecting an inf input past validation via the
        // score path on f64::MAX scale values.
        let e = random_energy(2, 7);
        let x = SampleBatch::new(Array2::from_shape_vec(
            (2, 2),
            vec![0.1, 0.2, f64::MAX, f64::MAX],
        )
        .unwrap())
        .unwrap();
        let s = score_samples(&e, &x, Some(&[false, true])).unwrap();
        // Either both rows survive or the overflowing one is dropped; the
        // invariant under test is bookkeeping consistency.
        assert_eq!(s.scores.len() + s.excluded_nonfinite, 2);
        if let Some(labels) = &s.labels {
            assert_eq!(labels.len(), s.scores.len());
        }
    }
}
