//! Accuracy and rank-based AUROC.

use serde::{Deserialize, Serialize};

use crate::error::{IgtError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(IgtError::Contract(format!(
            "accuracy needs equal non-empty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mann–Whitney AUROC with midranks for ties. `positive[i]` marks the
/// positive class.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(IgtError::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(IgtError::Contract("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(IgtError::UndefinedMetric(format!(
            "AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied run i..=j shares the mean rank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro one-vs-rest AUROC over the columns of an n×C score matrix.
/// Returns the mean and the per-class values; classes absent from
/// `labels` (or present in every row) get `None` and are skipped.
pub fn auroc_macro<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<Option<f64>>)> {
    if probs.rows() != labels.len() {
        return Err(IgtError::Contract(format!(
            "{} score rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let per_class: Vec<Option<f64>> = (0..probs.cols())
        .map(|c| {
            let scores: Vec<f64> = (0..probs.rows()).map(|i| probs.get(i, c).as_f64()).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            auroc_binary(&scores, &pos).ok()
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(IgtError::UndefinedMetric(
            "no class has both members and non-members".into(),
        ));
    }
    Ok((defined.iter().sum::<f64>() / defined.len() as f64, per_class))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` when AUROC is undefined for the evaluated labels.
    pub auroc: Option<f64>,
    pub per_class_auroc: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
}

impl EvalReport {
    /// Builds a report from per-bag class probabilities.
    pub fn from_probs<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<Self> {
        let c = probs.cols();
        let preds: Vec<usize> = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
        let accuracy = accuracy(&preds, labels)?;
        let mut confusion = vec![vec![0; c]; c];
        for (&p, &l) in preds.iter().zip(labels) {
            if l >= c {
                return Err(IgtError::Contract(format!("label {l} with only {c} classes")));
            }
            confusion[l][p] += 1;
        }
        let (auroc, per_class_auroc) = match auroc_macro(probs, labels) {
            Ok((m, per)) => (Some(m), per),
            Err(IgtError::UndefinedMetric(_)) => (None, vec![None; c]),
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            accuracy,
            auroc,
            per_class_auroc,
            confusion,
            n_samples: labels.len(),
        })
    }
}
