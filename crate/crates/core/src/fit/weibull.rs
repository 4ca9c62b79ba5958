//! Two-parameter Weibull maximum-likelihood fits for OpenMax tail models.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, LinearHead};
use crate::error::{OodError, Result};
use crate::linalg::{argmax, norm2, sub, Matrix};

const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullTail {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullTail {
    pub fn cdf(&self, x: f64) -> f64 {
        weibull_cdf(x, self.shape, self.scale)
    }
}

/// `1 − exp(−(x/λ)^k)` for `x ≥ 0`, zero below.
pub fn weibull_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    -(-(x / scale).powf(shape)).exp_m1()
}

/// Maximum-likelihood `(k, λ)`.
///
/// The shape solves the profile score equation
/// `Σ xᵏ ln x / Σ xᵏ − 1/k − mean(ln x) = 0` by safeguarded Newton iteration;
/// the scale follows as `(mean xᵏ)^(1/k)`. Returns `Ok(None)` when the sample
/// has no MLE (fewer than two points, a non-positive value, or zero spread).
pub fn fit_weibull(samples: &[f64]) -> Result<Option<WeibullTail>> {
    if samples.len() < 2 || samples.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Ok(None);
    }
    let x_max = samples.iter().copied().fold(0.0, f64::max);
    let logs: Vec<f64> = samples.iter().map(|&x| (x / x_max).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
    let spread = logs.iter().map(|l| (l - mean_log).abs()).fold(0.0, f64::max);
    if spread < 1e-12 {
        return Ok(None);
    }

    // values of g(k) and g'(k); logs are ≤ 0 so xᵏ = exp(k ln x) never overflows
    let eval = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let g = s1 / s0 - 1.0 / k - mean_log;
        let dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        (g, dg)
    };

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut k = 1.0;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (g, dg) = eval(k);
        if g < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * k };
        }
        let step = (next - k).abs();
        k = next;
        if step <= NEWTON_TOL * k.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OodError::NonConvergence(format!(
            "Weibull shape did not converge in {NEWTON_MAX_ITER} iterations"
        )));
    }
    let mean_pow = logs.iter().map(|&l| (k * l).exp()).sum::<f64>() / logs.len() as f64;
    let scale = x_max * mean_pow.powf(1.0 / k);
    Ok(Some(WeibullTail { shape: k, scale }))
}

/// OpenMax model: per-class mean activation vectors and Weibull tails of the
/// distances of correctly classified samples from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxModel {
    /// C x C, activation (logit) space.
    pub mavs: Matrix,
    /// `None` means "never recalibrate" for that class.
    pub tails: Vec<Option<WeibullTail>>,
    pub tail_sizes: Vec<usize>,
    pub alpha_top: usize,
    /// Classes whose tail was shrunk below the requested size or rejected.
    pub flagged: Vec<usize>,
}

pub fn fit_openmax_tails(
    train: &FeatureSet,
    head: &LinearHead,
    tail_size: usize,
    alpha_top: usize,
) -> Result<OpenMaxModel> {
    if tail_size < 2 {
        return Err(OodError::InvalidArgument("OpenMax tail size must be at least 2".into()));
    }
    if alpha_top == 0 {
        return Err(OodError::InvalidArgument("OpenMax alpha_top must be at least 1".into()));
    }
    let labels = train.labels()?;
    let c = head.num_classes();
    let logits = head.logits(&train.features)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, (f, &y)) in logits.iter_rows().zip(labels).enumerate() {
        if y < c && argmax(f) == y {
            members[y].push(i);
        }
    }

    let mut mavs = Matrix::zeros(c, c);
    let mut tails = Vec::with_capacity(c);
    let mut tail_sizes = Vec::with_capacity(c);
    let mut flagged = Vec::new();
    for (k, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            tails.push(None);
            tail_sizes.push(0);
            flagged.push(k);
            continue;
        }
        let mav = mavs.row_mut(k);
        for &i in idx {
            for (m, v) in mav.iter_mut().zip(logits.row(i)) {
                *m += v;
            }
        }
        mav.iter_mut().for_each(|m| *m /= idx.len() as f64);
        let mav = mavs.row(k).to_vec();

        let mut dists: Vec<f64> = idx.iter().map(|&i| norm2(&sub(logits.row(i), &mav))).collect();
        dists.sort_by(|a, b| b.total_cmp(a));
        let eta = tail_size.min(dists.len());
        dists.truncate(eta);
        let tail = fit_weibull(&dists)?;
        if eta < tail_size || tail.is_none() {
            flagged.push(k);
        }
        tails.push(tail);
        tail_sizes.push(eta);
    }
    Ok(OpenMaxModel {
        mavs,
        tails,
        tail_sizes,
        alpha_top,
        flagged,
    })
}
