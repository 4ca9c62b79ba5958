//! Core value types: feature dumps, the linear head, probability and score vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::linalg::{dot, Matrix};
use crate::scores::Method;

/// Penultimate-layer features with optional labels, logits and sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub logits: Option<Matrix>,
    pub ids: Option<Vec<String>>,
}

impl FeatureSet {
    pub fn new(features: Matrix) -> Self {
        Self {
            features,
            labels: None,
            logits: None,
            ids: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_logits(mut self, logits: Matrix) -> Self {
        self.logits = Some(logits);
        self
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the logits, if present.
    pub fn num_classes(&self) -> Option<usize> {
        self.logits.as_ref().map(Matrix::cols)
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| OodError::InvalidArgument("feature set has no labels".into()))
    }

    /// Keeps the given rows, in order, across every channel.
    pub fn select(&self, idx: &[usize]) -> FeatureSet {
        FeatureSet {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            logits: self.logits.as_ref().map(|m| m.select_rows(idx)),
            ids: self.ids.as_ref().map(|v| idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    /// Stored logits if present, otherwise logits recomputed through `head`.
    pub fn logits_or(&self, head: Option<&LinearHead>, method: Method) -> Result<Matrix> {
        if let Some(l) = &self.logits {
            return Ok(l.clone());
        }
        match head {
            Some(h) => h.logits(&self.features),
            None => Err(OodError::MissingChannel {
                method,
                channel: "logits",
            }),
        }
    }
}

/// Final linear layer `f(z) = W z + b`, with `W` stored as C x d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(OodError::DimensionMismatch(format!(
                "head has {} weight rows but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(OodError::InvalidArgument("head must have C >= 1 and d >= 1".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, z) + b)
            .collect()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(OodError::DimensionMismatch(format!(
                "features have d={}, head expects d={}",
                features.cols(),
                self.feature_dim()
            )));
        }
        let mut out = Matrix::zeros(features.rows(), self.num_classes());
        for (i, z) in features.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.apply(z));
        }
        Ok(out)
    }
}

/// A softmax output. Only constructible through [`softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Temperature softmax with max-shift.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(OodError::InvalidArgument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(OodError::Empty("logits"));
    }
    Ok(ProbVector(softmax_unchecked(logits, temperature)))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&f| ((f - m) / temperature).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// `ln Σ exp(v_c)`, shifted by the maximum.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-sample scores; higher always means "more in-distribution".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub method: Method,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: Method, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(OodError::NonFinite {
                channel: "scores",
                row: i,
                col: 0,
            });
        }
        Ok(Self { method, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Channels only the extractor can produce: MC-dropout probability stacks and
/// ODIN input-perturbed logits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedDump {
    /// Row-major N x T x C.
    pub dropout_probs: Option<DropoutStack>,
    pub odin_logits: Option<Matrix>,
    pub meta: DumpMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DumpMeta {
    pub checkpoint: Option<String>,
    pub dropout_passes: Option<usize>,
    pub odin_temperature: Option<f64>,
    pub odin_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutStack {
    n: usize,
    passes: usize,
    classes: usize,
    data: Vec<f64>,
}

impl DropoutStack {
    pub fn new(n: usize, passes: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if passes == 0 {
            return Err(OodError::InvalidArgument("dropout stack needs T >= 1".into()));
        }
        let expected = n
            .checked_mul(passes)
            .and_then(|v| v.checked_mul(classes))
            .ok_or_else(|| OodError::DimensionOverflow("dropout stack size".into()))?;
        if data.len() != expected {
            return Err(OodError::DimensionMismatch(format!(
                "dropout stack needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            n,
            passes,
            classes,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The T x C probability block of sample `i`.
    pub fn sample(&self, i: usize) -> Matrix {
        let block = self.passes * self.classes;
        Matrix::from_vec(
            self.passes,
            self.classes,
            self.data[i * block..(i + 1) * block].to_vec(),
        )
        .expect("block size is consistent by construction")
    }

    pub fn select(&self, idx: &[usize]) -> DropoutStack {
        let block = self.passes * self.classes;
        let mut data = Vec::with_capacity(idx.len() * block);
        for &i in idx {
            data.extend_from_slice(&self.data[i * block..(i + 1) * block]);
        }
        DropoutStack {
            n: idx.len(),
            passes: self.passes,
            classes: self.classes,
            data,
        }
    }
}

impl AugmentedDump {
    pub fn select(&self, idx: &[usize]) -> AugmentedDump {
        AugmentedDump {
            dropout_probs: self.dropout_probs.as_ref().map(|s| s.select(idx)),
            odin_logits: self.odin_logits.as_ref().map(|m| m.select_rows(idx)),
            meta: self.meta.clone(),
        }
    }
}

/// A single invariant violation found by [`validate_feature_set`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyFeatureDim,
    FeatureDimMismatch { features: usize, head: usize },
    NonFinite { channel: &'static str, row: usize, col: usize },
    LabelCount { labels: usize, samples: usize },
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    LogitRows { logits: usize, samples: usize },
    LogitColumns { logits: usize, classes: usize },
    IdCount { ids: usize, samples: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyFeatureDim => write!(f, "feature_dim must be at least 1"),
            Violation::FeatureDimMismatch { features, head } => {
                write!(f, "feature_dim mismatch: features d={features}, head d={head}")
            }
            Violation::NonFinite { channel, row, col } => {
                write!(f, "non-finite at ({row},{col}) in {channel}")
            }
            Violation::LabelCount { labels, samples } => {
                write!(f, "label count {labels} != sample count {samples}")
            }
            Violation::LabelOutOfRange { row, label, classes } => {
                write!(f, "label out of range at row {row}: {label} >= {classes}")
            }
            Violation::LogitRows { logits, samples } => {
                write!(f, "logit rows {logits} != sample count {samples}")
            }
            Violation::LogitColumns { logits, classes } => {
                write!(f, "logit columns {logits} != class count {classes}")
            }
            Violation::IdCount { ids, samples } => {
                write!(f, "id count {ids} != sample count {samples}")
            }
        }
    }
}

/// Checks every dimensional and finiteness invariant. Violations are returned as
/// data; an empty list means the set is valid.
pub fn validate_feature_set(fs: &FeatureSet, head: Option<&LinearHead>) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = fs.len();
    if fs.dim() == 0 {
        out.push(Violation::EmptyFeatureDim);
    }
    if let Some(h) = head {
        if h.feature_dim() != fs.dim() {
            out.push(Violation::FeatureDimMismatch {
                features: fs.dim(),
                head: h.feature_dim(),
            });
        }
    }
    push_non_finite(&mut out, "features", &fs.features);

    let classes = head
        .map(LinearHead::num_classes)
        .or_else(|| fs.num_classes());
    if let Some(logits) = &fs.logits {
        if logits.rows() != n {
            out.push(Violation::LogitRows {
                logits: logits.rows(),
                samples: n,
            });
        }
        if let Some(h) = head {
            if logits.cols() != h.num_classes() {
                out.push(Violation::LogitColumns {
                    logits: logits.cols(),
                    classes: h.num_classes(),
                });
            }
        }
        push_non_finite(&mut out, "logits", logits);
    }
    if let Some(labels) = &fs.labels {
        if labels.len() != n {
            out.push(Violation::LabelCount {
                labels: labels.len(),
                samples: n,
            });
        }
        if let Some(c) = classes {
            for (row, &label) in labels.iter().enumerate() {
                if label >= c {
                    out.push(Violation::LabelOutOfRange {
                        row,
                        label,
                        classes: c,
                    });
                }
            }
        }
    }
    if let Some(ids) = &fs.ids {
        if ids.len() != n {
            out.push(Violation::IdCount {
                ids: ids.len(),
                samples: n,
            });
        }
    }
    out
}

fn push_non_finite(out: &mut Vec<Violation>, channel: &'static str, m: &Matrix) {
    for (row, r) in m.iter_rows().enumerate() {
        for (col, v) in r.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFinite { channel, row, col });
            }
        }
    }
}
