//! Exact AUCROC, average precision and F1-Macro for binary fraud scores.
//!
//! Degenerate class distributions produce `None` rather than an error so that
//! multi-run aggregation can skip them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("label at index {index} is {value}, expected 0 or 1")]
    BadLabel { index: usize, value: u8 },
}

/// Fraud-class scores paired with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(MetricsError::BadLabel { index: i, value: labels[i] });
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Indices sorted by descending score.
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        idx
    }
}

/// Mann–Whitney AUC with ties counted as one half, via a single sort.
pub fn aucroc(s: &ScoredLabels) -> Option<f64> {
    let pos = s.positives();
    let neg = s.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let order = s.order_desc();
    // Walk tie groups from the top; each positive beats every negative below
    // its group and ties with the negatives inside it.
    let mut wins = 0.0f64;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        let neg_below = neg - neg_above - gn;
        wins += gp as f64 * neg_below as f64 + 0.5 * gp as f64 * gn as f64;
        neg_above += gn;
        i = j;
    }
    Some(wins / (pos as f64 * neg as f64))
}

/// Step-wise average precision with tied scores forming a single threshold.
pub fn aucprc(s: &ScoredLabels) -> Option<f64> {
    let pos = s.positives();
    if pos == 0 {
        return None;
    }
    let order = s.order_desc();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && s.scores[order[j]] == s.scores[order[i]] {
            if s.labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Some(ap)
}

/// Unweighted mean of the per-class F1 scores; a class with no predicted and
/// no true members scores 0.
pub fn f1_macro(predictions: &[u8], labels: &[u8]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    for class in [0u8, 1] {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == class, l == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        total += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    Ok(total / 2.0)
}

/// Metrics over one evaluation set. `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aucroc: Option<f64>,
    pub aucprc: Option<f64>,
    pub f1_macro: Option<f64>,
    /// `[benign, fraud]` counts.
    pub support: [usize; 2],
}

impl EvalReport {
    /// Scores are fraud probabilities; predictions take the argmax, i.e. fraud when the score exceeds one half.
    pub fn from_scores(s: &ScoredLabels) -> Self {
        let predictions: Vec<u8> = s.scores.iter().map(|&p| u8::from(p > 0.5)).collect();
        let pos = s.positives();
        Self {
            aucroc: aucroc(s),
            aucprc: aucprc(s),
            f1_macro: f1_macro(&predictions, &s.labels).ok(),
            support: [s.len() - pos, pos],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn aucroc_cases() {
        assert_eq!(aucroc(&sl(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])), Some(1.0));
        assert_eq!(aucroc(&sl(&[0.1, 0.2, 0.9, 0.8], &[1, 1, 0, 0])), Some(0.0));
        assert_eq!(aucroc(&sl(&[0.4; 5], &[1, 0, 1, 0, 0])), Some(0.5));
        assert_eq!(aucroc(&sl(&[0.4, 0.3], &[1, 1])), None);
        // one positive at 0.5 ties one of two negatives and beats the other
        assert_eq!(aucroc(&sl(&[0.5, 0.5, 0.1], &[1, 0, 0])), Some(0.75));
    }

    #[test]
    fn aucprc_cases() {
        assert_eq!(aucprc(&sl(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])), Some(1.0));
        for n in 1..12usize {
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let mut labels = vec![0u8; n];
            labels[n - 1] = 1;
            let ap = aucprc(&sl(&scores, &labels)).unwrap();
            assert!((ap - 1.0 / n as f64).abs() < 1e-15);
        }
        assert_eq!(aucprc(&sl(&[0.1, 0.2], &[0, 0])), None);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_macro(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        // all benign on 6 benign / 2 fraud: F1_benign = 12/14, F1_fraud = 0
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        let got = f1_macro(&[0; 8], &labels).unwrap();
        assert_eq!(got, 0.5 * (12.0 / 14.0));
        let swapped_l: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        assert_eq!(f1_macro(&[1; 8], &swapped_l).unwrap(), got);
        assert!(f1_macro(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert_eq!(ScoredLabels::new(vec![], vec![]), Err(MetricsError::Empty));
        assert!(ScoredLabels::new(vec![f64::NAN], vec![0]).is_err());
        assert!(ScoredLabels::new(vec![0.2], vec![3]).is_err());
        assert!(ScoredLabels::new(vec![0.2, 0.1], vec![1]).is_err());
    }

    #[test]
    fn report_uses_argmax_threshold() {
        let r = EvalReport::from_scores(&sl(&[0.7, 0.5, 0.2], &[1, 0, 0]));
        assert_eq!(r.support, [2, 1]);
        assert_eq!(r.f1_macro, Some(1.0));
        let single = EvalReport::from_scores(&sl(&[0.7, 0.5], &[0, 0]));
        assert_eq!(single.aucroc, None);
        assert_eq!(single.aucprc, None);
    }
}
