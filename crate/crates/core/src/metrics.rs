//! Imputation errors, binary classification metrics and clustering
//! agreement scores.

use std::collections::HashMap;
use std::fmt;

use crate::error::{PotsError, Result};

fn masked_pairs<'a>(
    pred: &'a [f64],
    target: &'a [f64],
    mask: &'a [bool],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(PotsError::invalid(format!(
            "length mismatch: pred {}, target {}, mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(PotsError::invalid("mask selects no cells"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (p, t)))
}

pub fn masked_mae(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in masked_pairs(pred, target, mask)? {
        sum += (p - t).abs();
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in masked_pairs(pred, target, mask)? {
        sum += (p - t) * (p - t);
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn masked_rmse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    masked_mse(pred, target, mask).map(f64::sqrt)
}

/// `Σ|pred−target| / Σ|target|` over masked cells.
pub fn masked_mre(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in masked_pairs(pred, target, mask)? {
        num += (p - t).abs();
        den += t.abs();
    }
    if den == 0.0 {
        return Err(PotsError::invalid(
            "relative error undefined: masked targets are all zero",
        ));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub roc_auc: Option<f64>,
    /// `None` when only one class is present.
    pub pr_auc: Option<f64>,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl BinaryMetricsReport {
    /// Ordered `(key, value)` pairs; undefined AUCs render as `nan`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
        vec![
            ("accuracy", self.accuracy.to_string()),
            ("precision", self.precision.to_string()),
            ("recall", self.recall.to_string()),
            ("f1", self.f1.to_string()),
            ("roc_auc", opt(self.roc_auc)),
            ("pr_auc", opt(self.pr_auc)),
            ("threshold", self.threshold.to_string()),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("tn", self.tn.to_string()),
            ("fn", self.fn_.to_string()),
        ]
    }
}

/// One `key=value` line per metric.
impl fmt::Display for BinaryMetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

fn check_binary(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(PotsError::invalid(format!(
            "need equal non-empty scores and labels, got {} and {}",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(PotsError::invalid(format!(
            "binary label must be 0 or 1, got {l}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PotsError::invalid("scores contain NaN"));
    }
    Ok(())
}

/// Confusion metrics at `threshold` (score ≥ threshold predicts 1) plus
/// ROC and PR areas.
pub fn binary_classification_metrics(
    scores: &[f64],
    labels: &[usize],
    threshold: f64,
) -> Result<BinaryMetricsReport> {
    check_binary(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BinaryMetricsReport {
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
        roc_auc: roc_auc(scores, labels)?,
        pr_auc: pr_auc(scores, labels)?,
        threshold,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Probability that a random positive outranks a random negative, ties
/// counting ½ (Mann–Whitney U / (P·N)), via mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    check_binary(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of doubled mid-ranks of positives keeps everything integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum2 += mid2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(Some(u2 as f64 / (2 * p * n) as f64))
}

/// Average precision: `Σ (Rₖ − Rₖ₋₁)·Pₖ` over distinct descending score
/// thresholds (step interpolation).
pub fn pr_auc(scores: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    check_binary(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(Some(area))
}

/// Fraction of correct predictions.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(PotsError::invalid(
            "accuracy needs equal non-empty label vectors",
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn check_pairs(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(PotsError::invalid(format!(
            "labelings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(PotsError::invalid("need at least two labeled items"));
    }
    Ok(())
}

fn choose2(n: u128) -> u128 {
    n * n.saturating_sub(1) / 2
}

/// Share of item pairs on which two labelings agree (same/different).
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_pairs(a, b)?;
    let mut joint: HashMap<(usize, usize), u128> = HashMap::new();
    let mut ca: HashMap<usize, u128> = HashMap::new();
    let mut cb: HashMap<usize, u128> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let total = choose2(a.len() as u128);
    let both: u128 = joint.values().map(|&c| choose2(c)).sum();
    let same_a: u128 = ca.values().map(|&c| choose2(c)).sum();
    let same_b: u128 = cb.values().map(|&c| choose2(c)).sum();
    // agreements = pairs together in both + pairs apart in both
    let agree = total + 2 * both - same_a - same_b;
    Ok(agree as f64 / total as f64)
}

/// `Σ_c max_t |c ∩ t| / n` over predicted clusters `c`.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pairs(pred, truth)?;
    let mut joint: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry(p).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = joint.values().map(|m| *m.values().max().unwrap()).sum();
    Ok(hits as f64 / pred.len() as f64)
}
