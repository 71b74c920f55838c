//! Voxel-level detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::MaskVolume;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!("score {i} is not finite")));
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| **l).count();
    (pos, labels.len() - pos)
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Area under the ROC curve: the Mann–Whitney probability that a random
/// positive outscores a random negative, with ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes ({pos} positive, {neg} negative)")));
    }
    let order = descending(scores);
    // Walk groups of tied scores from the top; each positive beats every
    // negative seen later and ties with negatives in its own group.
    let mut wins = 0.0f64;
    let mut neg_below = neg as f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gp += 1
            } else {
                gn += 1
            }
            j += 1;
        }
        neg_below -= gn as f64;
        wins += gp as f64 * (neg_below + 0.5 * gn as f64);
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over the distinct score
/// thresholds in descending order, tied scores entering together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1
            } else {
                fp += 1
            }
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Dice overlap `2|A∩B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p && t) as usize;
        a += p as usize;
        b += t as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Per-volume and pooled scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub dice: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pooled over every voxel of every test volume.
    pub auroc: f64,
    pub auprc: f64,
    /// Pooled Dice: `2 Σ|A∩B| / (Σ|A| + Σ|B|)`.
    pub dice: f64,
    pub per_volume: Vec<VolumeMetrics>,
}

/// One test volume's outputs and ground truth, all in ROI coordinates.
pub struct EvalItem<'a> {
    pub scores: &'a MaskVolume,
    pub binary: &'a MaskVolume,
    pub truth: &'a MaskVolume,
}

/// Pooled voxel-wise AUROC/AUPRC over the continuous maps and Dice over the
/// binary masks; per-volume values are reported where defined.
pub fn evaluate(items: &[EvalItem<'_>]) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut all_pred = Vec::new();
    let mut per_volume = Vec::with_capacity(items.len());
    for it in items {
        for m in [it.binary, it.truth] {
            if m.dims() != it.scores.dims() {
                return Err(Error::shape(it.scores.dims(), m.dims()));
            }
        }
        let scores: Vec<f64> = it.scores.data().iter().map(|&v| v as f64).collect();
        let labels: Vec<bool> = it.truth.data().iter().map(|&v| v > 0.0).collect();
        let pred: Vec<bool> = it.binary.data().iter().map(|&v| v > 0.0).collect();
        per_volume.push(VolumeMetrics {
            auroc: auroc(&scores, &labels).ok(),
            auprc: auprc(&scores, &labels).ok(),
            dice: dice(&pred, &labels)?,
            positives: labels.iter().filter(|l| **l).count(),
        });
        all_scores.extend(scores);
        all_labels.extend(labels);
        all_pred.extend(pred);
    }
    Ok(MetricsReport {
        auroc: auroc(&all_scores, &all_labels)?,
        auprc: auprc(&all_scores, &all_labels)?,
        dice: dice(&all_pred, &all_labels)?,
        per_volume,
    })
}
