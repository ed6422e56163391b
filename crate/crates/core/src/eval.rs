//! Confusion counts, ROC/AUC and F1 at a fixed threshold.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::data::WindowSample;
use crate::error::{bail, Error, Result};
use crate::model::{score, ModelParams, Variant};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        bail!(Contract, "{} scores for {} labels", scores.len(), labels.len());
    }
    if scores.is_empty() {
        bail!(Contract, "no samples to score");
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        bail!(Contract, "score {} is NaN", i);
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        bail!(Contract, "label {} at {} is not 0/1", labels[i], i);
    }
    Ok(())
}

/// A sample is predicted anomalous when its score is `>= thr`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], thr: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= thr, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per distinct score (descending), framed by `(+inf, 0, 0)` and
/// `(-inf, 1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let rates = |tp: usize, fp: usize| (fp as f64 / neg as f64, tp as f64 / pos as f64);
    let mut points = Vec::new();
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr, tpr) = rates(tp, fp);
        points.push(RocPoint { threshold: thr, fpr, tpr });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(points)
}

/// Trapezoidal area under a ROC point list.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Trapezoidal AUC; equal to the fraction of correctly ordered
/// positive/negative pairs with ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(trapezoid_area(&roc_curve(scores, labels)?))
}

/// `(precision, recall, f1)`, with every `0/0` taken as 0.
pub fn f1_from_counts(c: &ConfusionCounts) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub n_samples: usize,
    pub n_anomalies: usize,
}

pub fn report_from_scores(scores: &[f64], labels: &[u8], thr: f64) -> Result<EvalReport> {
    let counts = confusion_at_threshold(scores, labels, thr)?;
    let (precision, recall, f1) = f1_from_counts(&counts);
    Ok(EvalReport {
        auc: auc(scores, labels)?,
        f1,
        precision,
        recall,
        threshold: thr,
        counts,
        n_samples: scores.len(),
        n_anomalies: counts.tp + counts.fn_,
    })
}

/// Scores in the order of `samples`.
pub fn score_samples(params: &ModelParams, samples: &[WindowSample], variant: Variant) -> Result<Vec<f64>> {
    let plan = params.plan();
    samples.iter().map(|s| score(params, s, &plan, variant)).collect()
}

/// Scores every sample and assembles the report at `thr`.
pub fn evaluate(
    params: &ModelParams,
    samples: &[WindowSample],
    thr: f64,
    variant: Variant,
) -> Result<(EvalReport, Vec<f64>)> {
    let scores = score_samples(params, samples, variant)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok((report_from_scores(&scores, &labels, thr)?, scores))
}
