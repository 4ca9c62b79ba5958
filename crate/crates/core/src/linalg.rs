//! Dense row-major matrices and the handful of factorizations the fitters need.
//!
//! Storage is deliberately simple: samples are rows, so per-sample scoring works
//! on contiguous slices. Heavy factorizations go through `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| {
            OodError::DimensionOverflow(format!("{rows} x {cols} does not fit in memory"))
        })?;
        if data.len() != expected {
            return Err(OodError::DimensionMismatch(format!(
                "{rows} x {cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. `cols` is needed for the empty case.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(OodError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.data.chunks_exact(cols).take(n)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Selects a subset of rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.iter_rows().zip(v) {
            axpy(s, r, &mut out);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Quadratic form `xᵀ A x` for square `A`.
pub fn quad_form(a: &Matrix, x: &[f64]) -> f64 {
    a.iter_rows().zip(x).map(|(row, xi)| xi * dot(row, x)).sum()
}

/// Index of the largest entry; ties resolve to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
/// The result is symmetrized to remove rounding asymmetry.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(OodError::DimensionMismatch(format!(
            "cannot invert a {} x {} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(OodError::InvalidData("non-finite covariance".into()));
    }
    let chol = nalgebra::Cholesky::new(a.to_nalgebra())
        .ok_or_else(|| OodError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let inv = chol.inverse();
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Ok(out)
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are returned in non-increasing order. Each eigenvector (a column
/// of the returned matrix) is signed so that its first non-negligible component
/// is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows() != a.cols() {
        return Err(OodError::DimensionMismatch("eigendecomposition needs a square matrix".into()));
    }
    let n = a.rows();
    let eig = SymmetricEigen::new(a.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order among exact ties
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|r| eig.eigenvectors[(r, src)]).collect();
        let sign = leading_sign(&col);
        for (r, v) in col.iter().enumerate() {
            vectors[(r, k)] = sign * v;
        }
    }
    Ok((values, vectors))
}

fn leading_sign(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    match v.iter().find(|x| x.abs() > tol) {
        Some(&x) if x < 0.0 => -1.0,
        _ => 1.0,
    }
}

/// Leading singular triplet `(s, u, v)` of `z`, by power iteration on `zᵀz`.
#[derive(Debug, Clone)]
pub struct SingularTriplet {
    pub value: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub iterations: usize,
}

pub fn top_singular_triplet(z: &Matrix, max_iter: usize, tol: f64) -> SingularTriplet {
    let (n, d) = (z.rows(), z.cols());
    // deterministic start: the row with the largest norm
    let mut v = vec![0.0; d];
    let start = (0..n)
        .map(|i| norm2(z.row(i)))
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        });
    match start {
        Some((i, s)) if s > 0.0 => {
            for (vj, zj) in v.iter_mut().zip(z.row(i)) {
                *vj = zj / s;
            }
        }
        _ => {
            return SingularTriplet {
                value: 0.0,
                left: vec![0.0; n],
                right: vec![0.0; d],
                iterations: 0,
            }
        }
    }

    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let zv = z.mul_vec(&v);
        let mut next = z.tr_mul_vec(&zv);
        let nn = norm2(&next);
        if nn == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < tol {
            break;
        }
    }

    let zv = z.mul_vec(&v);
    let value = norm2(&zv);
    let left = if value > 0.0 {
        zv.iter().map(|x| x / value).collect()
    } else {
        vec![0.0; n]
    };
    SingularTriplet {
        value,
        left,
        right: v,
        iterations,
    }
}
