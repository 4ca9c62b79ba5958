use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, LinearHead};
use crate::error::{OodError, Result};
use crate::fit::gaussian::{fit_class_means, mean};
use crate::linalg::{argmax, Matrix};

/// Percentile with linear interpolation between order statistics (the rank of
/// percentile `q` is `q/100 · (n − 1)`).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(OodError::Empty("percentile input"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(OodError::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(v[lo] + (v[hi] - v[lo]) * frac)
}

/// Clamp threshold: the given percentile of every activation of every training
/// feature, pooled.
pub fn fit_react_threshold(train: &FeatureSet, pct: f64) -> Result<f64> {
    percentile(train.features.as_slice(), pct)
}

/// Number of entries out of `d` kept when pruning the bottom `p` percent.
pub fn kept_count(d: usize, p: f64) -> usize {
    let pruned = (d as f64 * p / 100.0).round() as usize;
    d - pruned.min(d)
}

/// Indices of the `k` largest values; ties go to the lower index.
pub(crate) fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceMask {
    /// C x d of 0.0 / 1.0.
    pub mask: Matrix,
    pub sparsity: f64,
    /// Set when the mask keeps nothing.
    pub degenerate: bool,
}

/// Per class, keeps the top-(100 − p)% weight contributions `W[c, j] · mean(z[j])`.
pub fn fit_dice_mask(train: &FeatureSet, head: &LinearHead, sparsity: f64) -> Result<DiceMask> {
    if !(0.0..=100.0).contains(&sparsity) {
        return Err(OodError::InvalidArgument(format!("sparsity {sparsity} outside [0, 100]")));
    }
    if head.feature_dim() != train.dim() {
        return Err(OodError::DimensionMismatch("head and training features differ in d".into()));
    }
    let mu = mean(&train.features)?;
    let d = train.dim();
    let keep = kept_count(d, sparsity);
    let mut mask = Matrix::zeros(head.num_classes(), d);
    for (c, w) in head.weights.iter_rows().enumerate() {
        let contrib: Vec<f64> = w.iter().zip(&mu).map(|(a, b)| a * b).collect();
        for j in top_k_indices(&contrib, keep) {
            mask[(c, j)] = 1.0;
        }
    }
    Ok(DiceMask {
        mask,
        sparsity,
        degenerate: keep == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShePatterns {
    /// C x d stored patterns.
    pub patterns: Matrix,
    /// Classes with no correctly classified training sample; these fall back to
    /// the plain class mean.
    pub fallback_classes: Vec<usize>,
}

/// Mean feature of training samples that are both labeled and predicted `c`.
pub fn fit_she_patterns(train: &FeatureSet, head: &LinearHead) -> Result<ShePatterns> {
    let labels = train.labels()?;
    let c = head.num_classes();
    let d = train.dim();
    let logits = head.logits(&train.features)?;
    let mut sums = Matrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for ((z, f), &y) in train.features.iter_rows().zip(logits.iter_rows()).zip(labels) {
        if argmax(f) == y {
            counts[y] += 1;
            for (s, v) in sums.row_mut(y).iter_mut().zip(z) {
                *s += v;
            }
        }
    }
    let mut fallback_classes = Vec::new();
    let mut class_means = None;
    for k in 0..c {
        if counts[k] == 0 {
            let means = match &class_means {
                Some(m) => m,
                None => class_means.insert(fit_class_means(train, c)?),
            };
            sums.row_mut(k).copy_from_slice(means.row(k));
            fallback_classes.push(k);
        } else {
            let n = counts[k] as f64;
            sums.row_mut(k).iter_mut().for_each(|s| *s /= n);
        }
    }
    Ok(ShePatterns {
        patterns: sums,
        fallback_classes,
    })
}
