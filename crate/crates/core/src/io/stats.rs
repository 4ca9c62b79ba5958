//! `.oods` fitted-statistics bundles.
//!
//! ```text
//! "OODS" | u16 version | u64 feature_dim | u64 num_classes | u64 section count
//! section: u8 tag (1 stats, 2 threshold) | u8 method code | u64 length | payload
//! ```
//!
//! Floats are stored as f64 so a round trip is bit-exact. The method code is
//! the method's position in [`Method::ALL`].

use std::path::Path;

use crate::decision::{PositiveClass, Threshold};
use crate::error::{OodError, Result};
use crate::fit::{
    DiceMask, FittedStats, KnnIndex, MethodStats, OpenMaxModel, PrincipalSubspace, Prototypes,
    ShePatterns, WeibullTail,
};
use crate::io::codec::{ByteReader, ByteWriter};
use crate::linalg::Matrix;
use crate::scores::Method;

pub const STATS_MAGIC: [u8; 4] = *b"OODS";
pub const STATS_VERSION: u16 = 1;

const TAG_STATS: u8 = 1;
const TAG_THRESHOLD: u8 = 2;

fn method_code(m: Method) -> u8 {
    Method::ALL.iter().position(|&x| x == m).expect("method listed in ALL") as u8
}

fn method_from_code(code: u8) -> Result<Method> {
    Method::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| OodError::InvalidData(format!("unknown method code {code}")))
}

fn write_subspace(w: &mut ByteWriter, s: &PrincipalSubspace) {
    w.f64_vec(&s.mean);
    w.matrix(&s.basis);
    w.f64_vec(&s.eigenvalues);
}

fn read_subspace(r: &mut ByteReader<'_>) -> Result<PrincipalSubspace> {
    Ok(PrincipalSubspace {
        mean: r.f64_vec()?,
        basis: r.matrix()?,
        eigenvalues: r.f64_vec()?,
    })
}

fn encode_section(s: &MethodStats) -> Vec<u8> {
    let mut w = ByteWriter::new();
    match s {
        MethodStats::Mahalanobis {
            class_means,
            shared_cov_inv,
        } => {
            w.matrix(class_means);
            w.matrix(shared_cov_inv);
        }
        MethodStats::Rmds {
            class_means,
            class_cov_invs,
            background_mean,
            background_cov_inv,
        } => {
            w.matrix(class_means);
            w.usize(class_cov_invs.len());
            for m in class_cov_invs {
                w.matrix(m);
            }
            w.f64_vec(background_mean);
            w.matrix(background_cov_inv);
        }
        MethodStats::Knn(idx) | MethodStats::Relation(idx) => w.matrix(idx.points()),
        MethodStats::Fdbd { train_mean } => w.f64_vec(train_mean),
        MethodStats::Vim { subspace, alpha } => {
            write_subspace(&mut w, subspace);
            w.f64(*alpha);
        }
        MethodStats::Residual(s) => write_subspace(&mut w, s),
        MethodStats::Klm(p) => {
            w.matrix(&p.distributions);
            w.usize_vec(&p.empty_classes);
        }
        MethodStats::Tempscale { temperature } => w.f64(*temperature),
        MethodStats::React { threshold } => w.f64(*threshold),
        MethodStats::Dice(m) => {
            w.matrix(&m.mask);
            w.f64(m.sparsity);
            w.bool(m.degenerate);
        }
        MethodStats::She(p) => {
            w.matrix(&p.patterns);
            w.usize_vec(&p.fallback_classes);
        }
        MethodStats::Openmax(m) => {
            w.matrix(&m.mavs);
            w.usize(m.tails.len());
            for t in &m.tails {
                match t {
                    Some(t) => {
                        w.bool(true);
                        w.f64(t.shape);
                        w.f64(t.scale);
                    }
                    None => w.bool(false),
                }
            }
            w.usize_vec(&m.tail_sizes);
            w.usize(m.alpha_top);
            w.usize_vec(&m.flagged);
        }
    }
    w.into_inner()
}

fn decode_section(method: Method, r: &mut ByteReader<'_>) -> Result<MethodStats> {
    Ok(match method {
        Method::Mahalanobis => MethodStats::Mahalanobis {
            class_means: r.matrix()?,
            shared_cov_inv: r.matrix()?,
        },
        Method::Rmds => {
            let class_means = r.matrix()?;
            let n = r.usize()?;
            // each matrix needs at least its 16-byte shape prefix
            if n > r.remaining() / 16 {
                return Err(OodError::Truncated {
                    offset: r.position(),
                    needed: n.saturating_mul(16),
                    available: r.remaining(),
                });
            }
            let class_cov_invs = (0..n).map(|_| r.matrix()).collect::<Result<_>>()?;
            MethodStats::Rmds {
                class_means,
                class_cov_invs,
                background_mean: r.f64_vec()?,
                background_cov_inv: r.matrix()?,
            }
        }
        Method::Knn => MethodStats::Knn(KnnIndex::from_normalized(r.matrix()?)),
        Method::Relation => MethodStats::Relation(KnnIndex::from_normalized(r.matrix()?)),
        Method::Fdbd => MethodStats::Fdbd {
            train_mean: r.f64_vec()?,
        },
        Method::Vim => MethodStats::Vim {
            subspace: read_subspace(r)?,
            alpha: r.f64()?,
        },
        Method::Residual => MethodStats::Residual(read_subspace(r)?),
        Method::Klm => MethodStats::Klm(Prototypes {
            distributions: r.matrix()?,
            empty_classes: r.usize_vec()?,
        }),
        Method::Tempscale => MethodStats::Tempscale {
            temperature: r.f64()?,
        },
        Method::React => MethodStats::React { threshold: r.f64()? },
        Method::Dice => MethodStats::Dice(DiceMask {
            mask: r.matrix()?,
            sparsity: r.f64()?,
            degenerate: r.bool()?,
        }),
        Method::She => MethodStats::She(ShePatterns {
            patterns: r.matrix()?,
            fallback_classes: r.usize_vec()?,
        }),
        Method::Openmax => {
            let mavs = r.matrix()?;
            let n = r.usize()?;
            if n > r.remaining() {
                return Err(OodError::Truncated {
                    offset: r.position(),
                    needed: n,
                    available: r.remaining(),
                });
            }
            let mut tails = Vec::with_capacity(n);
            for _ in 0..n {
                tails.push(if r.bool()? {
                    Some(WeibullTail {
                        shape: r.f64()?,
                        scale: r.f64()?,
                    })
                } else {
                    None
                });
            }
            MethodStats::Openmax(OpenMaxModel {
                mavs,
                tails,
                tail_sizes: r.usize_vec()?,
                alpha_top: r.usize()?,
                flagged: r.usize_vec()?,
            })
        }
        other => {
            return Err(OodError::InvalidData(format!(
                "{other} has no fitted statistics section"
            )))
        }
    })
}

fn shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(OodError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(OodError::InvalidData(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(OodError::DimensionMismatch(format!(
            "{name} has length {}, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(OodError::InvalidData(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(OodError::InvalidData(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

fn check_subspace(s: &PrincipalSubspace, d: usize) -> Result<()> {
    vector("subspace mean", &s.mean, d)?;
    shape("subspace basis", &s.basis, d, s.basis.cols())?;
    if s.basis.cols() > d {
        return Err(OodError::DimensionMismatch("subspace wider than feature space".into()));
    }
    vector("eigenvalues", &s.eigenvalues, s.basis.cols())
}

fn class_indices(name: &str, v: &[usize], c: usize) -> Result<()> {
    match v.iter().find(|&&i| i >= c) {
        Some(i) => Err(OodError::InvalidData(format!("{name} index {i} >= C = {c}"))),
        None => Ok(()),
    }
}

/// Shape and range checks so that scoring with loaded statistics cannot index
/// out of bounds.
pub fn check_stats(stats: &FittedStats) -> Result<()> {
    let (d, c) = (stats.feature_dim, stats.num_classes);
    for (&key, s) in &stats.sections {
        if s.method() != key {
            return Err(OodError::InvalidData(format!("section {key} holds {}", s.method())));
        }
        match s {
            MethodStats::Mahalanobis {
                class_means,
                shared_cov_inv,
            } => {
                shape("class means", class_means, c, d)?;
                shape("shared covariance inverse", shared_cov_inv, d, d)?;
            }
            MethodStats::Rmds {
                class_means,
                class_cov_invs,
                background_mean,
                background_cov_inv,
            } => {
                shape("class means", class_means, c, d)?;
                if class_cov_invs.len() != c {
                    return Err(OodError::DimensionMismatch("class covariance count".into()));
                }
                for m in class_cov_invs {
                    shape("class covariance inverse", m, d, d)?;
                }
                vector("background mean", background_mean, d)?;
                shape("background covariance inverse", background_cov_inv, d, d)?;
            }
            MethodStats::Knn(idx) | MethodStats::Relation(idx) => {
                shape("neighbour index", idx.points(), idx.len(), d)?;
            }
            MethodStats::Fdbd { train_mean } => vector("training mean", train_mean, d)?,
            MethodStats::Vim { subspace, alpha } => {
                check_subspace(subspace, d)?;
                positive("alpha", *alpha)?;
            }
            MethodStats::Residual(s) => check_subspace(s, d)?,
            MethodStats::Klm(p) => {
                shape("prototypes", &p.distributions, c, c)?;
                class_indices("empty class", &p.empty_classes, c)?;
            }
            MethodStats::Tempscale { temperature } => positive("temperature", *temperature)?,
            MethodStats::React { threshold } => {
                if !threshold.is_finite() {
                    return Err(OodError::InvalidData("non-finite clamp threshold".into()));
                }
            }
            MethodStats::Dice(m) => shape("dice mask", &m.mask, c, d)?,
            MethodStats::She(p) => {
                shape("she patterns", &p.patterns, c, d)?;
                class_indices("fallback class", &p.fallback_classes, c)?;
            }
            MethodStats::Openmax(m) => {
                shape("mean activation vectors", &m.mavs, c, c)?;
                if m.tails.len() != c {
                    return Err(OodError::DimensionMismatch("weibull tail count".into()));
                }
                for t in m.tails.iter().flatten() {
                    positive("weibull shape", t.shape)?;
                    positive("weibull scale", t.scale)?;
                }
                if m.alpha_top == 0 {
                    return Err(OodError::InvalidData("alpha_top must be at least 1".into()));
                }
                class_indices("flagged class", &m.flagged, c)?;
            }
        }
    }
    for (&key, t) in &stats.thresholds {
        if t.method.is_some_and(|m| m != key) {
            return Err(OodError::InvalidData(format!("threshold under {key} is for another method")));
        }
        if !t.lambda.is_finite() || !(t.target_tpr > 0.0 && t.target_tpr <= 1.0) {
            return Err(OodError::InvalidData(format!("bad threshold for {key}")));
        }
    }
    Ok(())
}

pub fn encode_stats(stats: &FittedStats) -> Result<Vec<u8>> {
    check_stats(stats)?;
    let mut w = ByteWriter::new();
    w.bytes(&STATS_MAGIC);
    w.u16(STATS_VERSION);
    w.usize(stats.feature_dim);
    w.usize(stats.num_classes);
    w.usize(stats.sections.len() + stats.thresholds.len());
    for (&m, s) in &stats.sections {
        let payload = encode_section(s);
        w.u8(TAG_STATS);
        w.u8(method_code(m));
        w.usize(payload.len());
        w.bytes(&payload);
    }
    for (&m, t) in &stats.thresholds {
        let mut p = ByteWriter::new();
        p.f64(t.lambda);
        p.f64(t.target_tpr);
        p.u8(match t.positive_class {
            PositiveClass::Id => 0,
            PositiveClass::Ood => 1,
        });
        let payload = p.into_inner();
        w.u8(TAG_THRESHOLD);
        w.u8(method_code(m));
        w.usize(payload.len());
        w.bytes(&payload);
    }
    Ok(w.into_inner())
}

pub fn decode_stats(buf: &[u8]) -> Result<FittedStats> {
    let mut r = ByteReader::new(buf);
    r.magic(STATS_MAGIC)?;
    let version = r.u16()?;
    if version != STATS_VERSION {
        return Err(OodError::UnsupportedVersion(version));
    }
    let mut stats = FittedStats::new(r.usize()?, r.usize()?);
    let count = r.usize()?;
    for _ in 0..count {
        let tag = r.u8()?;
        let method = method_from_code(r.u8()?)?;
        let len = r.usize()?;
        let mut sub = ByteReader::new(r.take(len)?);
        match tag {
            TAG_STATS => {
                let s = decode_section(method, &mut sub)?;
                if stats.sections.insert(method, s).is_some() {
                    return Err(OodError::InvalidData(format!("duplicate {method} section")));
                }
            }
            TAG_THRESHOLD => {
                let lambda = sub.f64()?;
                let target_tpr = sub.f64()?;
                let positive_class = match sub.u8()? {
                    0 => PositiveClass::Id,
                    1 => PositiveClass::Ood,
                    b => return Err(OodError::InvalidData(format!("bad positive class {b}"))),
                };
                let t = Threshold {
                    lambda,
                    target_tpr,
                    positive_class,
                    method: Some(method),
                };
                if stats.thresholds.insert(method, t).is_some() {
                    return Err(OodError::InvalidData(format!("duplicate {method} threshold")));
                }
            }
            other => return Err(OodError::InvalidData(format!("unknown section tag {other}"))),
        }
        sub.finish()?;
    }
    r.finish()?;
    check_stats(&stats)?;
    Ok(stats)
}

pub fn save_stats(stats: &FittedStats, path: &Path) -> Result<()> {
    std::fs::write(path, encode_stats(stats)?)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<FittedStats> {
    decode_stats(&std::fs::read(path)?)
}
