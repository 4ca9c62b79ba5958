//! Scores computed from logits or softmax outputs alone.

use crate::data::{log_sum_exp, softmax_unchecked};
use crate::linalg::{norm1, Matrix};

const KL_FLOOR: f64 = 1e-12;

/// Maximum softmax probability.
pub fn msp(logits: &[f64]) -> f64 {
    max_prob(&softmax_unchecked(logits, 1.0))
}

/// Maximum logit.
pub fn mls(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `T · ln Σ exp(f_c / T)`.
pub fn energy(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|f| f / temperature).collect();
    temperature * log_sum_exp(&scaled)
}

/// Maximum of the temperature-scaled softmax.
pub fn tempscale(logits: &[f64], temperature: f64) -> f64 {
    max_prob(&softmax_unchecked(logits, temperature))
}

/// Generalized entropy over the `top_m` largest probabilities (all classes when
/// `None`): `−Σ p_m^γ (1 − p_m)^γ`.
pub fn gen(logits: &[f64], gamma: f64, top_m: Option<usize>) -> f64 {
    let mut p = softmax_unchecked(logits, 1.0);
    p.sort_by(|a, b| b.total_cmp(a));
    let m = top_m.map_or(p.len(), |m| m.min(p.len()));
    -p[..m]
        .iter()
        .map(|&q| q.powf(gamma) * (1.0 - q).max(0.0).powf(gamma))
        .sum::<f64>()
}

/// Negative natural-log entropy of the mean over T dropout passes (`T x C`).
pub fn mcdropout(probs: &Matrix) -> f64 {
    let t = probs.rows() as f64;
    let mut mean = vec![0.0; probs.cols()];
    for r in probs.iter_rows() {
        for (m, p) in mean.iter_mut().zip(r) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    mean.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
}

/// Maximum temperature softmax of the extractor's input-perturbed logits.
pub fn odin(perturbed_logits: &[f64], temperature: f64) -> f64 {
    tempscale(perturbed_logits, temperature)
}

/// `−min_c KL(p ‖ d_c)`, prototype entries floored at 1e-12 and `0 · ln 0 = 0`.
pub fn klmatch(logits: &[f64], prototypes: &Matrix) -> f64 {
    let p = softmax_unchecked(logits, 1.0);
    let min_kl = prototypes
        .iter_rows()
        .map(|d| kl_divergence(&p, d))
        .fold(f64::INFINITY, f64::min);
    -min_kl
}

pub(crate) fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(KL_FLOOR).ln()))
        .sum()
}

/// `‖softmax(f) − 1/C‖₁ · ‖z‖₁`.
pub fn gradnorm(z: &[f64], logits: &[f64]) -> f64 {
    let p = softmax_unchecked(logits, 1.0);
    let u = 1.0 / p.len() as f64;
    let dist: f64 = p.iter().map(|q| (q - u).abs()).sum();
    dist * norm1(z)
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
