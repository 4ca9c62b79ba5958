use serde::{Deserialize, Serialize};

use crate::data::{FeatureSet, LinearHead};
use crate::error::{OodError, Result};
use crate::fit::gaussian::{covariance, mean};
use crate::linalg::{norm2, sub, symmetric_eigen, Matrix};

/// Training mean plus the top-D eigenvectors (columns of `basis`, d x D) of the
/// centered training covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalSubspace {
    pub mean: Vec<f64>,
    pub basis: Matrix,
    pub eigenvalues: Vec<f64>,
}

impl PrincipalSubspace {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// `‖(z − μ) − P Pᵀ (z − μ)‖₂`.
    pub fn residual_norm(&self, z: &[f64]) -> f64 {
        residual_norm(&self.basis, &self.mean, z)
    }
}

pub fn residual_norm(basis: &Matrix, mean: &[f64], z: &[f64]) -> f64 {
    let centered = sub(z, mean);
    if basis.cols() == 0 {
        return norm2(&centered);
    }
    let coef = basis.tr_mul_vec(&centered);
    let proj = basis.mul_vec(&coef);
    norm2(&sub(&centered, &proj))
}

pub fn fit_principal_subspace(train: &FeatureSet, dim: usize) -> Result<PrincipalSubspace> {
    let d = train.dim();
    if dim > d {
        return Err(OodError::InvalidArgument(format!(
            "subspace dimension {dim} exceeds feature dimension {d}"
        )));
    }
    let mu = mean(&train.features)?;
    let cov = covariance(&train.features, |_| &mu);
    let (values, vectors) = symmetric_eigen(&cov)?;
    let cols: Vec<usize> = (0..dim).collect();
    let basis = vectors.transpose().select_rows(&cols).transpose();
    Ok(PrincipalSubspace {
        mean: mu,
        basis,
        eigenvalues: values[..dim].to_vec(),
    })
}

/// Ratio of summed training max-logits to summed training residual norms.
pub fn fit_vim_alpha(train: &FeatureSet, head: &LinearHead, subspace: &PrincipalSubspace) -> Result<f64> {
    if train.is_empty() {
        return Err(OodError::Empty("training features"));
    }
    if subspace.dim() >= train.dim() {
        return Err(OodError::DegenerateResidual);
    }
    let logits = head.logits(&train.features)?;
    let mut max_logit_sum = 0.0;
    let mut residual_sum = 0.0;
    let mut centered_sum = 0.0;
    for (z, f) in train.features.iter_rows().zip(logits.iter_rows()) {
        max_logit_sum += f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        residual_sum += subspace.residual_norm(z);
        centered_sum += norm2(&sub(z, &subspace.mean));
    }
    if !(residual_sum > 1e-12 * centered_sum.max(f64::MIN_POSITIVE)) {
        return Err(OodError::DegenerateResidual);
    }
    let alpha = max_logit_sum / residual_sum;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(OodError::NonPositiveAlpha(alpha));
    }
    Ok(alpha)
}
