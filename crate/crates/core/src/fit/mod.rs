//! Training-time statistics consumed by the score functions.
//!
//! Every artifact is fitted from the ID training dump (temperature and
//! KL-matching prototypes from the validation dump) and stored under the key of
//! the method that consumes it, so a bundle may hold a partial fit.

mod calibration;
mod gaussian;
pub(crate) mod knn;
mod sparsity;
mod subspace;
mod weibull;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use calibration::{fit_prototypes, fit_temperature, nll_at_temperature, Prototypes};
pub use gaussian::{
    covariance, fit_background_gaussian, fit_class_covariance_invs, fit_class_means,
    fit_shared_cov_inv, shrink, SHRINKAGE,
};
pub use knn::{fit_knn_index, KnnIndex};
pub use sparsity::{
    fit_dice_mask, fit_react_threshold, fit_she_patterns, kept_count, percentile, DiceMask,
    ShePatterns,
};
pub(crate) use sparsity::top_k_indices;
pub use subspace::{fit_principal_subspace, fit_vim_alpha, residual_norm, PrincipalSubspace};
pub use weibull::{fit_openmax_tails, fit_weibull, weibull_cdf, OpenMaxModel, WeibullTail};

use crate::data::{FeatureSet, LinearHead};
use crate::decision::Threshold;
use crate::error::{OodError, Result};
use crate::linalg::Matrix;
use crate::scores::{Method, MethodConfig};

/// The artifacts one method needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodStats {
    Mahalanobis {
        class_means: Matrix,
        shared_cov_inv: Matrix,
    },
    Rmds {
        class_means: Matrix,
        class_cov_invs: Vec<Matrix>,
        background_mean: Vec<f64>,
        background_cov_inv: Matrix,
    },
    Knn(KnnIndex),
    Relation(KnnIndex),
    Fdbd {
        train_mean: Vec<f64>,
    },
    Vim {
        subspace: PrincipalSubspace,
        alpha: f64,
    },
    Residual(PrincipalSubspace),
    Klm(Prototypes),
    Tempscale {
        temperature: f64,
    },
    React {
        threshold: f64,
    },
    Dice(DiceMask),
    She(ShePatterns),
    Openmax(OpenMaxModel),
}

impl MethodStats {
    pub fn method(&self) -> Method {
        match self {
            MethodStats::Mahalanobis { .. } => Method::Mahalanobis,
            MethodStats::Rmds { .. } => Method::Rmds,
            MethodStats::Knn(_) => Method::Knn,
            MethodStats::Relation(_) => Method::Relation,
            MethodStats::Fdbd { .. } => Method::Fdbd,
            MethodStats::Vim { .. } => Method::Vim,
            MethodStats::Residual(_) => Method::Residual,
            MethodStats::Klm(_) => Method::Klm,
            MethodStats::Tempscale { .. } => Method::Tempscale,
            MethodStats::React { .. } => Method::React,
            MethodStats::Dice(_) => Method::Dice,
            MethodStats::She(_) => Method::She,
            MethodStats::Openmax(_) => Method::Openmax,
        }
    }
}

/// All training-derived artifacts, keyed by consuming method.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FittedStats {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub sections: BTreeMap<Method, MethodStats>,
    pub thresholds: BTreeMap<Method, Threshold>,
}

impl FittedStats {
    pub fn new(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            num_classes,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, stats: MethodStats) {
        self.sections.insert(stats.method(), stats);
    }

    pub fn get(&self, method: Method) -> Result<&MethodStats> {
        self.sections
            .get(&method)
            .ok_or(OodError::MissingArtifact { method })
    }

    /// Fails unless the dump has the dimension these statistics were fitted at.
    pub fn ensure_compatible(&self, fs: &FeatureSet) -> Result<()> {
        if fs.dim() != self.feature_dim {
            return Err(OodError::DimensionMismatch(format!(
                "statistics fitted with d={}, dump has d={}",
                self.feature_dim,
                fs.dim()
            )));
        }
        if let Some(c) = fs.num_classes() {
            if self.num_classes != 0 && c != self.num_classes {
                return Err(OodError::DimensionMismatch(format!(
                    "statistics fitted with C={}, dump has C={c}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Inputs for fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub train: &'a FeatureSet,
    pub val: Option<&'a FeatureSet>,
    pub head: Option<&'a LinearHead>,
    pub seed: u64,
}

impl<'a> FitContext<'a> {
    pub fn num_classes(&self) -> Result<usize> {
        if let Some(h) = self.head {
            return Ok(h.num_classes());
        }
        if let Some(c) = self.train.num_classes() {
            return Ok(c);
        }
        self.train
            .labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .ok_or_else(|| OodError::InvalidArgument("cannot infer the class count".into()))
    }

    fn head(&self, method: Method) -> Result<&'a LinearHead> {
        self.head.ok_or(OodError::MissingChannel {
            method,
            channel: "linear head",
        })
    }

    fn val(&self, method: Method) -> Result<&'a FeatureSet> {
        self.val.ok_or(OodError::MissingChannel {
            method,
            channel: "validation dump",
        })
    }
}

/// Fits the artifacts `cfg.method` needs. Returns `None` for methods without
/// any fitted state (MSP, MLS, Energy, GEN, MCDropout, ODIN, GradNorm, ASH,
/// RankFeat).
pub fn fit_method(cfg: &MethodConfig, ctx: &FitContext<'_>) -> Result<Option<MethodStats>> {
    let m = cfg.method;
    let stats = match m {
        Method::Mahalanobis => {
            let c = ctx.num_classes()?;
            let class_means = fit_class_means(ctx.train, c)?;
            let shared_cov_inv = fit_shared_cov_inv(ctx.train, &class_means)?;
            MethodStats::Mahalanobis {
                class_means,
                shared_cov_inv,
            }
        }
        Method::Rmds => {
            let c = ctx.num_classes()?;
            let class_means = fit_class_means(ctx.train, c)?;
            let class_cov_invs = fit_class_covariance_invs(ctx.train, &class_means)?;
            let (background_mean, background_cov_inv) = fit_background_gaussian(ctx.train)?;
            MethodStats::Rmds {
                class_means,
                class_cov_invs,
                background_mean,
                background_cov_inv,
            }
        }
        Method::Knn => MethodStats::Knn(fit_knn_index(ctx.train, cfg.cap(), ctx.seed)?),
        Method::Relation => MethodStats::Relation(fit_knn_index(ctx.train, cfg.cap(), ctx.seed)?),
        Method::Fdbd => MethodStats::Fdbd {
            train_mean: crate::fit::gaussian::mean(&ctx.train.features)?,
        },
        Method::Vim => {
            let head = ctx.head(m)?;
            let subspace = fit_principal_subspace(ctx.train, cfg.dim())?;
            let alpha = fit_vim_alpha(ctx.train, head, &subspace)?;
            MethodStats::Vim { subspace, alpha }
        }
        Method::Residual => MethodStats::Residual(fit_principal_subspace(ctx.train, cfg.dim())?),
        Method::Klm => {
            let val = ctx.val(m)?;
            let logits = val.logits_or(ctx.head, m)?;
            MethodStats::Klm(fit_prototypes(&logits)?)
        }
        Method::Tempscale => {
            let val = ctx.val(m)?;
            let logits = val.logits_or(ctx.head, m)?;
            MethodStats::Tempscale {
                temperature: fit_temperature(&logits, val.labels()?)?,
            }
        }
        Method::React => MethodStats::React {
            threshold: fit_react_threshold(ctx.train, cfg.percentile())?,
        },
        Method::Dice => MethodStats::Dice(fit_dice_mask(ctx.train, ctx.head(m)?, cfg.sparsity())?),
        Method::She => MethodStats::She(fit_she_patterns(ctx.train, ctx.head(m)?)?),
        Method::Openmax => MethodStats::Openmax(fit_openmax_tails(
            ctx.train,
            ctx.head(m)?,
            cfg.tail_size(),
            cfg.alpha_top(),
        )?),
        Method::Msp
        | Method::Mls
        | Method::Energy
        | Method::Gen
        | Method::Mcdropout
        | Method::Odin
        | Method::Gradnorm
        | Method::Ash
        | Method::Rankfeat => return Ok(None),
    };
    Ok(Some(stats))
}

/// Fits every listed method into one bundle.
pub fn fit_all(configs: &[MethodConfig], ctx: &FitContext<'_>) -> Result<FittedStats> {
    let mut stats = FittedStats::new(ctx.train.dim(), ctx.num_classes()?);
    for cfg in configs {
        if let Some(s) = fit_method(cfg, ctx)? {
            stats.insert(s);
        }
    }
    Ok(stats)
}
