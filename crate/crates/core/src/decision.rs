//! Threshold rule: a sample is ID iff its score is at least λ.

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::scores::Method;

/// Which side of the threshold counts as a positive detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveClass {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub lambda: f64,
    /// Target true positive rate as a fraction in (0, 1].
    pub target_tpr: f64,
    pub positive_class: PositiveClass,
    pub method: Option<Method>,
}

/// Largest observed λ with `#{s ≥ λ} / N ≥ target_tpr`.
pub fn calibrate_threshold(id_scores: &[f64], target_tpr: f64) -> Result<Threshold> {
    let lambda = threshold_value(id_scores, target_tpr)?;
    Ok(Threshold {
        lambda,
        target_tpr,
        positive_class: PositiveClass::Id,
        method: None,
    })
}

pub(crate) fn threshold_value(scores: &[f64], target_tpr: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(OodError::Empty("calibration scores"));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(OodError::InvalidArgument(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(OodError::InvalidArgument(format!("score {bad} is not comparable")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    // the 1e-9 slack keeps e.g. 0.95 * 20 from rounding up to 20
    let k = ((target_tpr * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(sorted[k - 1])
}

pub fn classify(score: f64, threshold: &Threshold) -> Verdict {
    if score >= threshold.lambda {
        Verdict::Id
    } else {
        Verdict::Ood
    }
}

pub fn classify_batch(scores: &[f64], threshold: &Threshold) -> Vec<Verdict> {
    scores.iter().map(|&s| classify(s, threshold)).collect()
}
