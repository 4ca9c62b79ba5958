//! Detection metrics, ID accuracy and rank correlation. All rates are
//! returned as percentages.

use serde::{Deserialize, Serialize};

use crate::decision::threshold_value;
use crate::error::{OodError, Result};
use crate::linalg::{argmax, Matrix};

/// Mann–Whitney AUROC with midranks: P(pos > neg) + ½ P(pos = neg), in percent.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(OodError::Empty("positive scores"));
    }
    if neg.is_empty() {
        return Err(OodError::Empty("negative scores"));
    }
    let (np, nn) = (pos.len(), neg.len());
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(OodError::InvalidArgument("NaN score".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of doubled positive midranks keeps everything in integers.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j, doubled midrank = i + 1 + j
        let mid2 = (i + 1 + j) as u128;
        let npos = all[i..j].iter().filter(|x| x.1).count() as u128;
        rank_sum2 += mid2 * npos;
        i = j;
    }
    let np128 = np as u128;
    // 2U = 2R - np(np+1)
    let u2 = rank_sum2 - np128 * (np128 + 1);
    Ok(u2 as f64 / (2.0 * np as f64 * nn as f64) * 100.0)
}

/// Percent of negatives at or above the threshold that keeps `target_tpr`
/// of the positives.
pub fn fpr_at_tpr(pos: &[f64], neg: &[f64], target_tpr: f64) -> Result<f64> {
    if neg.is_empty() {
        return Err(OodError::Empty("negative scores"));
    }
    let lambda = threshold_value(pos, target_tpr)?;
    let passed = neg.iter().filter(|&&s| s >= lambda).count();
    Ok(passed as f64 / neg.len() as f64 * 100.0)
}

/// Top-1 accuracy in percent, ties to the lower class index.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(OodError::DimensionMismatch(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(OodError::Empty("labels"));
    }
    let hits = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64 * 100.0)
}

/// 1-based midranks.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(OodError::InvalidArgument("constant input has no rank correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of midranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(OodError::DimensionMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(OodError::Empty("need at least two pairs"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(OodError::InvalidArgument("NaN value".into()));
    }
    pearson(&midranks(x), &midranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub fpr95_id: f64,
    pub fpr95_ood: f64,
    pub fpr99_id: f64,
    pub fpr99_ood: f64,
    /// ID-positive AUROC; the OoD-positive value is `100 − auroc`.
    pub auroc: f64,
    pub acc: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricRow {
    /// All detection metrics in both polarities. OoD-positive rates use the
    /// negated scores with the roles swapped.
    pub fn compute(id_scores: &[f64], ood_scores: &[f64], acc: Option<f64>) -> Result<MetricRow> {
        let neg_id: Vec<f64> = id_scores.iter().map(|s| -s).collect();
        let neg_ood: Vec<f64> = ood_scores.iter().map(|s| -s).collect();
        Ok(MetricRow {
            fpr95_id: fpr_at_tpr(id_scores, ood_scores, 0.95)?,
            fpr95_ood: fpr_at_tpr(&neg_ood, &neg_id, 0.95)?,
            fpr99_id: fpr_at_tpr(id_scores, ood_scores, 0.99)?,
            fpr99_ood: fpr_at_tpr(&neg_ood, &neg_id, 0.99)?,
            auroc: auroc(id_scores, ood_scores)?,
            acc,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
        })
    }

    pub fn auroc_ood_positive(&self) -> f64 {
        100.0 - self.auroc
    }

    /// The five detection metrics in report column order.
    pub fn values(&self) -> [f64; 5] {
        [self.fpr95_id, self.fpr95_ood, self.fpr99_id, self.fpr99_ood, self.auroc]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (n − 1). A single value has std 0.
    pub fn of(values: &[f64]) -> Result<MeanStd> {
        if values.is_empty() {
            return Err(OodError::Empty("values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub fpr95_id: MeanStd,
    pub fpr95_ood: MeanStd,
    pub fpr99_id: MeanStd,
    pub fpr99_ood: MeanStd,
    pub auroc: MeanStd,
    pub acc: Option<MeanStd>,
    pub runs: usize,
    /// Set when only one run was available, so `std` carries no information.
    pub single_run: bool,
}

pub fn summarize(rows: &[MetricRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(OodError::Empty("metric rows"));
    }
    let col = |f: fn(&MetricRow) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
    let accs: Vec<f64> = rows.iter().filter_map(|r| r.acc).collect();
    let acc = if accs.len() == rows.len() {
        Some(MeanStd::of(&accs)?)
    } else {
        None
    };
    Ok(Summary {
        fpr95_id: col(|r| r.fpr95_id)?,
        fpr95_ood: col(|r| r.fpr95_ood)?,
        fpr99_id: col(|r| r.fpr99_id)?,
        fpr99_ood: col(|r| r.fpr99_ood)?,
        auroc: col(|r| r.auroc)?,
        acc,
        runs: rows.len(),
        single_run: rows.len() == 1,
    })
}
