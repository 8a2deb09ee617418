//! Threshold-free ranking metrics: ROC AUC, average precision, ROC points.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Scores with binary labels (`true` = anomalous, the positive class).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
    positives: usize,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "LabeledScores" });
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::Data("evaluation needs both normal and anomalous labels".into()));
        }
        Ok(LabeledScores {
            scores,
            labels,
            positives,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives
    }

    /// Indices by descending score; equal scores keep input order.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        idx
    }
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from midranks.
pub fn roc_auc(ls: &LabeledScores) -> f64 {
    let mut idx: Vec<usize> = (0..ls.len()).collect();
    idx.sort_by(|&a, &b| ls.scores[a].partial_cmp(&ls.scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && ls.scores[idx[j + 1]] == ls.scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| ls.labels[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let p = ls.positives() as f64;
    let n = ls.negatives() as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

/// Average precision: the mean over positives of the precision at the
/// positive's rank, ranking by descending score with ties in input order.
pub fn auprc(ls: &LabeledScores) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in ls.descending().iter().enumerate() {
        if ls.labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / ls.positives() as f64
}

/// ROC staircase `(FPR, TPR)` from `(0,0)` to `(1,1)` with one point per
/// distinct score threshold.
pub fn roc_points(ls: &LabeledScores) -> Vec<(f64, f64)> {
    let order = ls.descending();
    let p = ls.positives() as f64;
    let n = ls.negatives() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pts = vec![(0.0, 0.0)];
    for (pos, &i) in order.iter().enumerate() {
        if ls.labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let boundary = order.get(pos + 1).is_none_or(|&next| ls.scores[next] != ls.scores[i]);
        if boundary {
            pts.push((fp as f64 / n, tp as f64 / p));
        }
    }
    pts
}

/// Precision-recall points `(recall, precision)`, one per distinct score
/// threshold in descending order.
pub fn pr_points(ls: &LabeledScores) -> Vec<(f64, f64)> {
    let order = ls.descending();
    let p = ls.positives() as f64;
    let mut tp = 0usize;
    let mut pts = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if ls.labels[i] {
            tp += 1;
        }
        let boundary = order.get(pos + 1).is_none_or(|&next| ls.scores[next] != ls.scores[i]);
        if boundary {
            pts.push((tp as f64 / p, tp as f64 / (pos + 1) as f64));
        }
    }
    pts
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Mean and half-width `1.96·s` of a 95% interval, `s` the sample standard
/// deviation. A single value has zero width.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Data("no values to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt()))
}
