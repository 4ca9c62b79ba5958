//! The 22 post-hoc score functions.
//!
//! Every function returns a score where higher means "more in-distribution".
//! Per-sample functions live in the submodules; [`score_dump`] applies a
//! configured method to a whole dump.

pub mod activation;
mod config;
pub mod distance;
pub mod logit;
pub mod openmax;
pub mod subspace;

use rayon::prelude::*;

pub use config::{Family, Method, MethodConfig, Param, ParamValue};
pub use config::{
    DEFAULT_ASH_PERCENTILE, DEFAULT_DICE_SPARSITY, DEFAULT_GEN_GAMMA, DEFAULT_KNN_CAP,
    DEFAULT_KNN_K, DEFAULT_ODIN_NOISE, DEFAULT_ODIN_TEMPERATURE, DEFAULT_OPENMAX_ALPHA,
    DEFAULT_OPENMAX_TAIL, DEFAULT_REACT_PERCENTILE, DEFAULT_RELATION_POW, DEFAULT_SHE_BETA,
    DEFAULT_VIM_DIM,
};

use crate::data::{AugmentedDump, FeatureSet, LinearHead, ScoreVector};
use crate::error::{OodError, Result};
use crate::fit::{FittedStats, MethodStats};
use crate::linalg::Matrix;

/// Everything a score may read for one dump.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub features: &'a FeatureSet,
    pub aug: Option<&'a AugmentedDump>,
    pub head: Option<&'a LinearHead>,
}

impl<'a> ScoreInputs<'a> {
    pub fn new(features: &'a FeatureSet, head: Option<&'a LinearHead>) -> Self {
        Self {
            features,
            aug: None,
            head,
        }
    }

    pub fn with_aug(mut self, aug: Option<&'a AugmentedDump>) -> Self {
        self.aug = aug;
        self
    }

    fn head(&self, method: Method) -> Result<&'a LinearHead> {
        let h = self.head.ok_or(OodError::MissingChannel {
            method,
            channel: "linear head",
        })?;
        if h.feature_dim() != self.features.dim() {
            return Err(OodError::DimensionMismatch(format!(
                "features have d={}, head expects d={}",
                self.features.dim(),
                h.feature_dim()
            )));
        }
        Ok(h)
    }
}

fn per_row<F>(m: &Matrix, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync + Send,
{
    (0..m.rows()).into_par_iter().map(|i| f(i, m.row(i))).collect()
}

fn per_row_pair<F>(a: &Matrix, b: &Matrix, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64], &[f64]) -> Result<f64> + Sync + Send,
{
    if a.rows() != b.rows() {
        return Err(OodError::DimensionMismatch(format!(
            "{} feature rows vs {} logit rows",
            a.rows(),
            b.rows()
        )));
    }
    (0..a.rows())
        .into_par_iter()
        .map(|i| f(i, a.row(i), b.row(i)))
        .collect()
}

fn mismatch<T>(method: Method) -> Result<T> {
    Err(OodError::InvalidData(format!("fitted section does not match {method}")))
}

/// Scores every sample of a dump with the configured method.
pub fn score_dump(cfg: &MethodConfig, stats: &FittedStats, inputs: ScoreInputs<'_>) -> Result<ScoreVector> {
    let m = cfg.method;
    let fs = inputs.features;
    if !stats.sections.is_empty() || stats.feature_dim != 0 {
        stats.ensure_compatible(fs)?;
    }
    let z = &fs.features;
    let scores = match m {
        Method::Msp => per_row(&fs.logits_or(inputs.head, m)?, |_, f| Ok(logit::msp(f)))?,
        Method::Mls => per_row(&fs.logits_or(inputs.head, m)?, |_, f| Ok(logit::mls(f)))?,
        Method::Energy => {
            let t = cfg.temperature();
            per_row(&fs.logits_or(inputs.head, m)?, |_, f| Ok(logit::energy(f, t)))?
        }
        Method::Gen => {
            let (g, top) = (cfg.gamma(), cfg.top_m());
            per_row(&fs.logits_or(inputs.head, m)?, |_, f| Ok(logit::gen(f, g, top)))?
        }
        Method::Tempscale => {
            let MethodStats::Tempscale { temperature } = stats.get(m)? else {
                return mismatch(m);
            };
            let t = *temperature;
            per_row(&fs.logits_or(inputs.head, m)?, |_, f| Ok(logit::tempscale(f, t)))?
        }
        Method::Mcdropout => {
            let stack = inputs
                .aug
                .and_then(|a| a.dropout_probs.as_ref())
                .ok_or(OodError::MissingChannel {
                    method: m,
                    channel: "dropout probability stack",
                })?;
            if stack.len() != fs.len() {
                return Err(OodError::DimensionMismatch("dropout stack rows".into()));
            }
            (0..stack.len())
                .into_par_iter()
                .map(|i| logit::mcdropout(&stack.sample(i)))
                .collect()
        }
        Method::Odin => {
            let odin = inputs
                .aug
                .and_then(|a| a.odin_logits.as_ref())
                .ok_or(OodError::MissingChannel {
                    method: m,
                    channel: "odin logits",
                })?;
            if odin.rows() != fs.len() {
                return Err(OodError::DimensionMismatch("odin logit rows".into()));
            }
            let t = cfg.temperature();
            per_row(odin, |_, f| Ok(logit::odin(f, t)))?
        }
        Method::Klm => {
            let MethodStats::Klm(p) = stats.get(m)? else {
                return mismatch(m);
            };
            per_row(&fs.logits_or(inputs.head, m)?, |_, f| {
                Ok(logit::klmatch(f, &p.distributions))
            })?
        }
        Method::Gradnorm => {
            let logits = fs.logits_or(inputs.head, m)?;
            per_row_pair(z, &logits, |_, zi, f| Ok(logit::gradnorm(zi, f)))?
        }
        Method::Mahalanobis => {
            let MethodStats::Mahalanobis {
                class_means,
                shared_cov_inv,
            } = stats.get(m)?
            else {
                return mismatch(m);
            };
            per_row(z, |_, zi| Ok(distance::mahalanobis(zi, class_means, shared_cov_inv)))?
        }
        Method::Rmds => {
            let MethodStats::Rmds {
                class_means,
                class_cov_invs,
                background_mean,
                background_cov_inv,
            } = stats.get(m)?
            else {
                return mismatch(m);
            };
            per_row(z, |_, zi| {
                Ok(distance::rmds(
                    zi,
                    class_means,
                    class_cov_invs,
                    background_mean,
                    background_cov_inv,
                ))
            })?
        }
        Method::Knn => {
            let MethodStats::Knn(index) = stats.get(m)? else {
                return mismatch(m);
            };
            let k = cfg.k();
            per_row(z, |i, zi| distance::knn(zi, index, k, i))?
        }
        Method::Relation => {
            let MethodStats::Relation(support) = stats.get(m)? else {
                return mismatch(m);
            };
            let pow = cfg.pow();
            per_row(z, |i, zi| distance::relation(zi, support, pow, i))?
        }
        Method::Fdbd => {
            let MethodStats::Fdbd { train_mean } = stats.get(m)? else {
                return mismatch(m);
            };
            let head = inputs.head(m)?;
            let opts = distance::FdbdOptions {
                distance_as_normalizer: cfg.distance_as_normalizer(),
                negate: cfg.negate(),
            };
            per_row(z, |i, zi| distance::fdbd(zi, head, train_mean, opts, i))?
        }
        Method::Vim => {
            let MethodStats::Vim { subspace: s, alpha } = stats.get(m)? else {
                return mismatch(m);
            };
            let logits = fs.logits_or(inputs.head, m)?;
            let a = *alpha;
            per_row_pair(z, &logits, |_, zi, f| Ok(subspace::vim(zi, f, s, a)))?
        }
        Method::Residual => {
            let MethodStats::Residual(s) = stats.get(m)? else {
                return mismatch(m);
            };
            per_row(z, |_, zi| Ok(subspace::residual(zi, s)))?
        }
        Method::Rankfeat => subspace::rankfeat(z, inputs.head(m)?)?.scores,
        Method::React => {
            let MethodStats::React { threshold } = stats.get(m)? else {
                return mismatch(m);
            };
            let head = inputs.head(m)?;
            let (b, t, e) = (*threshold, cfg.temperature(), cfg.react_energy());
            per_row(z, |_, zi| Ok(activation::react(zi, head, b, t, e)))?
        }
        Method::Ash => {
            let head = inputs.head(m)?;
            let p = cfg.percentile();
            per_row(z, |i, zi| activation::ash(zi, head, p, i))?
        }
        Method::Dice => {
            let MethodStats::Dice(mask) = stats.get(m)? else {
                return mismatch(m);
            };
            let head = inputs.head(m)?;
            per_row(z, |_, zi| Ok(activation::dice(zi, head, mask)))?
        }
        Method::She => {
            let MethodStats::She(p) = stats.get(m)? else {
                return mismatch(m);
            };
            let beta = cfg.beta();
            per_row(z, |_, zi| Ok(activation::she(zi, &p.patterns, beta)))?
        }
        Method::Openmax => {
            let MethodStats::Openmax(model) = stats.get(m)? else {
                return mismatch(m);
            };
            let head = inputs.head(m)?;
            per_row(z, |_, zi| Ok(openmax::openmax(&head.apply(zi), model)))?
        }
    };
    ScoreVector::new(m, scores)
}
