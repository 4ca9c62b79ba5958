use rayon::prelude::*;

use crate::data::FeatureSet;
use crate::error::{OodError, Result};
use crate::linalg::{spd_inverse, Matrix};

/// Relative covariance shrinkage: `Σ + SHRINKAGE · (tr Σ / d) · I`.
pub const SHRINKAGE: f64 = 1e-6;

pub(crate) fn mean(x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(OodError::Empty("training features"));
    }
    let mut acc = vec![0.0; x.cols()];
    for r in x.iter_rows() {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = x.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean feature vector per class, `C x d`.
pub fn fit_class_means(train: &FeatureSet, num_classes: usize) -> Result<Matrix> {
    let labels = train.labels()?;
    let d = train.dim();
    let mut sums = Matrix::zeros(num_classes, d);
    let mut counts = vec![0usize; num_classes];
    for (z, &y) in train.features.iter_rows().zip(labels) {
        if y >= num_classes {
            return Err(OodError::InvalidData(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(z) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(OodError::MissingClass(c));
        }
        sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

/// `(1/N) Σ_i (x_i − center_i)(x_i − center_i)ᵀ` where `center(i)` picks the
/// centering vector for row `i`.
pub fn covariance<'a, F>(x: &Matrix, center: F) -> Matrix
where
    F: Fn(usize) -> &'a [f64],
{
    let d = x.cols();
    let mut cov = Matrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (i, r) in x.iter_rows().enumerate() {
        let c = center(i);
        for j in 0..d {
            diff[j] = r[j] - c[j];
        }
        for j in 0..d {
            let dj = diff[j];
            if dj == 0.0 {
                continue;
            }
            let row = cov.row_mut(j);
            for k in j..d {
                row[k] += dj * diff[k];
            }
        }
    }
    let n = x.rows().max(1) as f64;
    for j in 0..d {
        for k in j..d {
            let v = cov[(j, k)] / n;
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    cov
}

/// Adds the ridge `SHRINKAGE · tr(Σ)/d` to the diagonal. A zero-trace matrix
/// (e.g. one sample per class) gets the absolute ridge `SHRINKAGE`.
pub fn shrink(mut cov: Matrix) -> Result<Matrix> {
    if !cov.is_finite() {
        return Err(OodError::InvalidData("non-finite covariance".into()));
    }
    let d = cov.rows();
    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let ridge = if trace > 0.0 {
        SHRINKAGE * trace / d as f64
    } else {
        SHRINKAGE
    };
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok(cov)
}

/// Inverse of the shrunk class-conditional covariance shared by all classes.
pub fn fit_shared_cov_inv(train: &FeatureSet, class_means: &Matrix) -> Result<Matrix> {
    let labels = train.labels()?;
    if train.is_empty() {
        return Err(OodError::Empty("training features"));
    }
    let cov = covariance(&train.features, |i| class_means.row(labels[i]));
    spd_inverse(&shrink(cov)?)
}

/// Per-class shrunk covariance inverses, each fitted independently.
pub fn fit_class_covariance_invs(train: &FeatureSet, class_means: &Matrix) -> Result<Vec<Matrix>> {
    let labels = train.labels()?;
    (0..class_means.rows())
        .into_par_iter()
        .map(|c| {
            let idx: Vec<usize> = (0..train.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                return Err(OodError::MissingClass(c));
            }
            let xs = train.features.select_rows(&idx);
            let cov = covariance(&xs, |_| class_means.row(c));
            spd_inverse(&shrink(cov)?)
        })
        .collect()
}

/// Single Gaussian over all training features, labels ignored.
pub fn fit_background_gaussian(train: &FeatureSet) -> Result<(Vec<f64>, Matrix)> {
    let mu = mean(&train.features)?;
    let cov = covariance(&train.features, |_| &mu);
    Ok((mu.clone(), spd_inverse(&shrink(cov)?)?))
}
