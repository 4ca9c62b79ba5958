//! Feature-space distance scores.

use crate::data::LinearHead;
use crate::error::{OodError, Result};
use crate::fit::KnnIndex;
use crate::linalg::{argmax, dot, norm2, quad_form, sub, Matrix};

/// `max_c −(z − μ_c)ᵀ Σ⁻¹ (z − μ_c)`.
pub fn mahalanobis(z: &[f64], class_means: &Matrix, cov_inv: &Matrix) -> f64 {
    class_means
        .iter_rows()
        .map(|mu| -quad_form(cov_inv, &sub(z, mu)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Relative Mahalanobis: class distance minus background distance, minimized
/// over classes and negated.
pub fn rmds(
    z: &[f64],
    class_means: &Matrix,
    class_cov_invs: &[Matrix],
    background_mean: &[f64],
    background_cov_inv: &Matrix,
) -> f64 {
    let background = quad_form(background_cov_inv, &sub(z, background_mean));
    let min = class_means
        .iter_rows()
        .zip(class_cov_invs)
        .map(|(mu, inv)| quad_form(inv, &sub(z, mu)) - background)
        .fold(f64::INFINITY, f64::min);
    -min
}

/// Negative distance from normalized `z` to its k-th nearest normalized
/// training feature.
pub fn knn(z: &[f64], index: &KnnIndex, k: usize, sample: usize) -> Result<f64> {
    let q = crate::fit::knn::normalized(z).ok_or(OodError::ZeroNorm(sample))?;
    Ok(-index.kth_distance(&q, k)?)
}

/// Sum over the support set of `max(0, cos(z, s))^pow`.
pub fn relation(z: &[f64], support: &KnnIndex, pow: f64, sample: usize) -> Result<f64> {
    let q = crate::fit::knn::normalized(z).ok_or(OodError::ZeroNorm(sample))?;
    Ok(support
        .points()
        .iter_rows()
        .map(|s| dot(&q, s).max(0.0).powf(pow))
        .sum())
}

#[derive(Debug, Clone, Copy)]
pub struct FdbdOptions {
    /// Divide by `‖z − μ_train‖` (true) or by `‖z‖` (false).
    pub distance_as_normalizer: bool,
    /// Apply the leading minus sign, flipping the orientation.
    pub negate: bool,
}

impl Default for FdbdOptions {
    fn default() -> Self {
        Self {
            distance_as_normalizer: true,
            negate: false,
        }
    }
}

/// Mean regularized distance to the decision boundaries between the predicted
/// class and every other class, over the feature's distance to the training mean.
pub fn fdbd(
    z: &[f64],
    head: &LinearHead,
    train_mean: &[f64],
    opts: FdbdOptions,
    sample: usize,
) -> Result<f64> {
    let c = head.num_classes();
    if c < 2 {
        return Err(OodError::InvalidArgument("fDBD needs at least two classes".into()));
    }
    let logits = head.apply(z);
    let y = argmax(&logits);
    let wy = head.weights.row(y);
    let mut total = 0.0;
    for k in (0..c).filter(|&k| k != y) {
        let dw = sub(wy, head.weights.row(k));
        let dn = norm2(&dw);
        if dn == 0.0 {
            return Err(OodError::DegenerateClassPair(y, k));
        }
        total += (dot(&dw, z) + head.bias[y] - head.bias[k]).abs() / dn;
    }
    let denom = if opts.distance_as_normalizer {
        norm2(&sub(z, train_mean))
    } else {
        norm2(z)
    };
    if denom == 0.0 {
        return Err(OodError::ZeroNorm(sample));
    }
    let score = total / (c - 1) as f64 / denom;
    Ok(if opts.negate { -score } else { score })
}
