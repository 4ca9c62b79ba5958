use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{OodError, Result};
use crate::linalg::{norm2, Matrix};

/// L2-normalized training features with exact (brute-force) neighbor search.
/// Also serves as the Relation support set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    points: Matrix,
}

impl KnnIndex {
    /// Builds an index from already-normalized rows.
    pub fn from_normalized(points: Matrix) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    /// Euclidean distance from `query` to its `k`-th nearest stored point.
    /// `query` must already be normalized.
    pub fn kth_distance(&self, query: &[f64], k: usize) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(OodError::NeighborCount { k, size: self.len() });
        }
        let mut d2: Vec<f64> = self.points.iter_rows().map(|p| sq_dist(p, query)).collect();
        let (_, kth, _) = d2.select_nth_unstable_by(k - 1, f64::total_cmp);
        Ok(kth.sqrt())
    }

    /// The `k` nearest stored points as `(index, distance)`, closest first,
    /// ties by lower index.
    pub fn neighbors(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.len() {
            return Err(OodError::NeighborCount { k, size: self.len() });
        }
        let mut all: Vec<(usize, f64)> = self
            .points
            .iter_rows()
            .enumerate()
            .map(|(i, p)| (i, sq_dist(p, query)))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        Ok(all.into_iter().map(|(i, d)| (i, d.sqrt())).collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit-normalizes `z`; `None` for a zero vector.
pub(crate) fn normalized(z: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(z);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(z.iter().map(|v| v / n).collect())
}

/// Normalizes the training features and, when there are more than `cap`, keeps a
/// seeded uniform subsample (in original order).
pub fn fit_knn_index(train: &FeatureSet, cap: usize, seed: u64) -> Result<KnnIndex> {
    if cap == 0 {
        return Err(OodError::InvalidArgument("index cap must be at least 1".into()));
    }
    let n = train.len();
    let keep: Vec<usize> = if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let d = train.dim();
    let mut points = Matrix::zeros(keep.len(), d);
    for (row, &i) in keep.iter().enumerate() {
        let z = normalized(train.features.row(i)).ok_or(OodError::ZeroNorm(i))?;
        points.row_mut(row).copy_from_slice(&z);
    }
    Ok(KnnIndex { points })
}
