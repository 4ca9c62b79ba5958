//! Shared test support: random instances, straight-line formula oracles and
//! the fixed report used by the golden-file tests.

#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use oodkit::data::{AugmentedDump, DropoutStack};
use oodkit::linalg::Matrix;
use oodkit::{FeatureSet, LinearHead};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn matrix(rows: &Rows) -> Matrix {
    let cols = rows.first().map_or(0, |r| r.len());
    Matrix::from_rows(rows, cols).unwrap()
}

pub fn rows_of(m: &Matrix) -> Rows {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Rows {
    (0..n).map(|_| (0..d).map(|_| scale * gaussian(rng)).collect()).collect()
}

/// A small random scoring problem: post-ReLU-like features, a linear head,
/// optionally independent logits, dropout probability stacks and ODIN logits.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub z: Rows,
    pub w: Rows,
    pub b: Vec<f64>,
    /// Logits the logit-only methods see: stored ones when present, else `Wz + b`.
    pub logits: Rows,
    pub stored_logits: bool,
    pub stack: Vec<Rows>,
    pub odin: Rows,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(2..=64);
        let d = rng.random_range(2..=16);
        let c = rng.random_range(2..=8);
        let z = uniform_rows(rng, n, d, 0.0, 2.0);
        let w = gaussian_rows(rng, c, d, 1.0);
        let b: Vec<f64> = (0..c).map(|_| 0.5 * gaussian(rng)).collect();
        let stored_logits = rng.random_bool(0.5);
        let logits = if stored_logits {
            gaussian_rows(rng, n, c, 3.0)
        } else {
            z.iter().map(|zi| oracle::affine(&w, &b, zi)).collect()
        };
        let t = rng.random_range(1..=6);
        let stack = (0..n)
            .map(|_| {
                (0..t)
                    .map(|_| {
                        let v: Vec<f64> = (0..c).map(|_| 2.0 * gaussian(rng)).collect();
                        oracle::softmax(&v, 1.0)
                    })
                    .collect()
            })
            .collect();
        let odin = gaussian_rows(rng, n, c, 3.0);
        Instance {
            n,
            d,
            c,
            z,
            w,
            b,
            logits,
            stored_logits,
            stack,
            odin,
        }
    }

    pub fn head_logits(&self) -> Rows {
        self.z.iter().map(|zi| oracle::affine(&self.w, &self.b, zi)).collect()
    }

    pub fn head(&self) -> LinearHead {
        LinearHead::new(matrix(&self.w), self.b.clone()).unwrap()
    }

    pub fn features(&self) -> FeatureSet {
        let fs = FeatureSet::new(matrix(&self.z));
        if self.stored_logits {
            fs.with_logits(matrix(&self.logits))
        } else {
            fs
        }
    }

    pub fn aug(&self) -> AugmentedDump {
        let t = self.stack[0].len();
        let flat: Vec<f64> = self.stack.iter().flatten().flatten().copied().collect();
        AugmentedDump {
            dropout_probs: Some(DropoutStack::new(self.n, t, self.c, flat).unwrap()),
            odin_logits: Some(matrix(&self.odin)),
            meta: Default::default(),
        }
    }
}

/// Symmetric positive definite `G Gᵀ / d + s I`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, s: f64) -> Rows {
    let g = gaussian_rows(rng, d, d, 1.0);
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let mut v: f64 = (0..d).map(|k| g[i][k] * g[j][k]).sum::<f64>() / d as f64;
                    if i == j {
                        v += s;
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// `k` orthonormal columns in `d` dimensions, returned as a `d x k` row list.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Rows {
    let mut cols: Rows = Vec::new();
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for q in &cols {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= p * b;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    (0..d).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Rows {
    gaussian_rows(rng, m, d, 1.0)
        .into_iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

pub fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
