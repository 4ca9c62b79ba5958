//! Scores that rewrite activations or weights before re-applying the head.

use crate::data::{log_sum_exp, LinearHead};
use crate::error::{OodError, Result};
use crate::fit::{kept_count, DiceMask};
use crate::linalg::{dot, Matrix};
use crate::scores::logit::{energy, tempscale};

/// Clamps activations at `threshold`, recomputes logits, then applies MSP
/// (at `temperature`) or, with `use_energy`, the energy score.
pub fn react(z: &[f64], head: &LinearHead, threshold: f64, temperature: f64, use_energy: bool) -> f64 {
    let clamped: Vec<f64> = z.iter().map(|&v| v.min(threshold)).collect();
    let logits = head.apply(&clamped);
    if use_energy {
        energy(&logits, temperature)
    } else {
        tempscale(&logits, temperature)
    }
}

/// ASH-S activation shaping: keeps the top-(100 − p)% activations (ties to the
/// lower index), zeroes the rest and rescales survivors so the activation sum
/// is preserved.
pub fn ash_shape(z: &[f64], pct: f64, sample: usize) -> Result<Vec<f64>> {
    let keep = kept_count(z.len(), pct);
    let total: f64 = z.iter().sum();
    let kept = crate::fit::top_k_indices(z, keep);
    let kept_sum: f64 = kept.iter().map(|&j| z[j]).sum();
    if total == 0.0 || kept_sum == 0.0 {
        return Err(OodError::ZeroActivationMass(sample));
    }
    let scale = total / kept_sum;
    let mut out = vec![0.0; z.len()];
    for j in kept {
        out[j] = z[j] * scale;
    }
    Ok(out)
}

/// Energy (T = 1) of logits recomputed from the ASH-S shaped feature.
pub fn ash(z: &[f64], head: &LinearHead, pct: f64, sample: usize) -> Result<f64> {
    let shaped = ash_shape(z, pct, sample)?;
    Ok(log_sum_exp(&head.apply(&shaped)))
}

/// `ln Σ_c exp(((M ⊙ W) z + b)_c)`.
pub fn dice(z: &[f64], head: &LinearHead, mask: &DiceMask) -> f64 {
    let logits: Vec<f64> = head
        .weights
        .iter_rows()
        .zip(mask.mask.iter_rows())
        .zip(&head.bias)
        .map(|((w, m), b)| w.iter().zip(m).zip(z).map(|((wi, mi), zi)| wi * mi * zi).sum::<f64>() + b)
        .collect();
    log_sum_exp(&logits)
}

/// `β⁻¹ ln Σ_j exp(β zᵀ S_j)`.
pub fn she(z: &[f64], patterns: &Matrix, beta: f64) -> f64 {
    let inner: Vec<f64> = patterns.iter_rows().map(|s| beta * dot(z, s)).collect();
    log_sum_exp(&inner) / beta
}
