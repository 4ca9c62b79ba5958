use serde::{Deserialize, Serialize};

use crate::data::{log_sum_exp, softmax_unchecked};
use crate::error::{OodError, Result};
use crate::linalg::{argmax, Matrix};

/// Mean softmax vector per predicted class (`C x C`, row c = prototype of c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub distributions: Matrix,
    /// Classes never predicted on the validation set; their rows are uniform.
    pub empty_classes: Vec<usize>,
}

pub fn fit_prototypes(logits: &Matrix) -> Result<Prototypes> {
    if logits.rows() == 0 {
        return Err(OodError::Empty("validation set"));
    }
    let c = logits.cols();
    let mut sums = Matrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for f in logits.iter_rows() {
        let y = argmax(f);
        let p = softmax_unchecked(f, 1.0);
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(&p) {
            *s += v;
        }
    }
    let mut empty_classes = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let row = sums.row_mut(k);
        if n == 0 {
            row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            empty_classes.push(k);
        } else {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(Prototypes {
        distributions: sums,
        empty_classes,
    })
}

/// Mean negative log-likelihood of `softmax(f / T)` at the true labels.
pub fn nll_at_temperature(logits: &Matrix, labels: &[usize], temperature: f64) -> f64 {
    let mut total = 0.0;
    let mut scaled = vec![0.0; logits.cols()];
    for (f, &y) in logits.iter_rows().zip(labels) {
        for (s, v) in scaled.iter_mut().zip(f) {
            *s = v / temperature;
        }
        total += log_sum_exp(&scaled) - scaled[y];
    }
    total / logits.rows() as f64
}

pub const TEMPERATURE_MIN: f64 = 0.01;
pub const TEMPERATURE_MAX: f64 = 100.0;
const LOG_T_TOLERANCE: f64 = 1e-4;

/// Temperature minimizing validation NLL over `[0.01, 100]`, by golden-section
/// search on `ln T`. The result never has a higher NLL than `T = 1`.
pub fn fit_temperature(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(OodError::Empty("validation set"));
    }
    if labels.len() != logits.rows() {
        return Err(OodError::DimensionMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(OodError::InvalidData(format!("label {bad} out of range")));
    }
    let f = |u: f64| nll_at_temperature(logits, labels, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LOG_T_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    let t = u.exp();
    if f(u) <= f(0.0) {
        Ok(t)
    } else {
        Ok(1.0)
    }
}
