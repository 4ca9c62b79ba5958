//! Principal-subspace scores (ViM, Residual) and RankFeat.

use crate::data::{log_sum_exp, LinearHead};
use crate::error::{OodError, Result};
use crate::fit::PrincipalSubspace;
use crate::linalg::{top_singular_triplet, Matrix};
use crate::scores::logit::mls;

pub const RANKFEAT_MAX_ITER: usize = 100;
pub const RANKFEAT_TOL: f64 = 1e-10;

/// `−α ‖(z − μ)^{P⊥}‖₂ + ln Σ_c exp f_c`.
pub fn vim(z: &[f64], logits: &[f64], subspace: &PrincipalSubspace, alpha: f64) -> f64 {
    -alpha * subspace.residual_norm(z) + log_sum_exp(logits)
}

/// `−‖(z − μ)^{P⊥}‖₂`.
pub fn residual(z: &[f64], subspace: &PrincipalSubspace) -> f64 {
    -subspace.residual_norm(z)
}

#[derive(Debug, Clone)]
pub struct RankFeatScores {
    pub scores: Vec<f64>,
    pub singular_value: f64,
    /// Set when the batch has a single row (always rank one).
    pub degenerate: bool,
}

/// Removes the leading rank-one component `s₁ u₁ v₁ᵀ` from the whole batch,
/// then scores each row by its maximum logit. Scores depend on the batch.
pub fn rankfeat(batch: &Matrix, head: &LinearHead) -> Result<RankFeatScores> {
    if batch.cols() != head.feature_dim() {
        return Err(OodError::DimensionMismatch(format!(
            "batch has d={}, head expects d={}",
            batch.cols(),
            head.feature_dim()
        )));
    }
    let t = top_singular_triplet(batch, RANKFEAT_MAX_ITER, RANKFEAT_TOL);
    let mut reduced = batch.clone();
    for i in 0..reduced.rows() {
        let a = t.value * t.left[i];
        for (x, v) in reduced.row_mut(i).iter_mut().zip(&t.right) {
            *x -= a * v;
        }
    }
    let scores = reduced.iter_rows().map(|z| mls(&head.apply(z))).collect();
    Ok(RankFeatScores {
        scores,
        singular_value: t.value,
        degenerate: batch.rows() == 1,
    })
}
