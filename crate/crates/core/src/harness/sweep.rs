//! Hyperparameter selection by validation AUROC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentedDump, FeatureSet};
use crate::error::{OodError, Result};
use crate::fit::{fit_method, FitContext, FittedStats, MethodStats};
use crate::metrics::auroc;
use crate::scores::{score_dump, Method, MethodConfig, Param, ParamValue, ScoreInputs};

/// Candidate values per hyperparameter. Points are the Cartesian product,
/// enumerated with the last key varying fastest.
pub type Grid = BTreeMap<Param, Vec<ParamValue>>;

/// Grids per method, as stored in `sweeps.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SweepPlan(pub BTreeMap<Method, Grid>);

impl SweepPlan {
    pub fn grid(&self, m: Method) -> Option<&Grid> {
        self.0.get(&m)
    }

    /// Checks every value against the method's accepted keys and ranges.
    pub fn validate(&self) -> Result<()> {
        for (&m, grid) in &self.0 {
            grid_points(&MethodConfig::new(m), grid)?;
        }
        Ok(())
    }
}

/// Features plus extractor channels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpData {
    pub features: FeatureSet,
    pub aug: Option<AugmentedDump>,
}

impl DumpData {
    pub fn new(features: FeatureSet, aug: Option<AugmentedDump>) -> Self {
        Self { features, aug }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> DumpData {
        DumpData {
            features: self.features.select(idx),
            aug: self.aug.as_ref().map(|a| a.select(idx)),
        }
    }

    pub fn inputs<'a>(&'a self, ctx: &FitContext<'a>) -> ScoreInputs<'a> {
        ScoreInputs::new(&self.features, ctx.head).with_aug(self.aug.as_ref())
    }
}

/// Every configuration in `grid`, layered over `base`, in declared order.
pub fn grid_points(base: &MethodConfig, grid: &Grid) -> Result<Vec<MethodConfig>> {
    let mut points = vec![base.clone()];
    for (&param, values) in grid {
        if values.is_empty() {
            return Err(OodError::InvalidConfig(format!(
                "empty grid for `{param}` of {}",
                base.method
            )));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut cfg = p.clone();
                cfg.set(param, v.clone())?;
                next.push(cfg);
            }
        }
        points = next;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: MethodConfig,
    /// Validation AUROC; absent when the point could not be evaluated.
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub selected: MethodConfig,
    pub table: Vec<GridPoint>,
    /// Statistics fitted for the selected point, reused at test time.
    pub stats: Option<MethodStats>,
}

/// Fits `cfg` and scores one split with it.
pub fn fit_and_score(
    cfg: &MethodConfig,
    ctx: &FitContext<'_>,
    splits: &[&DumpData],
) -> Result<(Option<MethodStats>, Vec<Vec<f64>>)> {
    let section = fit_method(cfg, ctx)?;
    let mut stats = FittedStats::new(ctx.train.dim(), ctx.num_classes()?);
    if let Some(s) = &section {
        stats.insert(s.clone());
    }
    let scores = splits
        .iter()
        .map(|d| score_dump(cfg, &stats, d.inputs(ctx)).map(|v| v.scores))
        .collect::<Result<Vec<_>>>()?;
    Ok((section, scores))
}

fn evaluate(
    cfg: &MethodConfig,
    ctx: &FitContext<'_>,
    val_id: &DumpData,
    val_ood: &[&DumpData],
) -> Result<(f64, Option<MethodStats>)> {
    let mut splits = vec![val_id];
    splits.extend_from_slice(val_ood);
    let (stats, scores) = fit_and_score(cfg, ctx, &splits)?;
    let ood: Vec<f64> = scores[1..].concat();
    Ok((auroc(&scores[0], &ood)?, stats))
}

/// Evaluates every grid point and keeps the one with the highest validation
/// AUROC (ties to the earliest point). Points that fail, e.g. a subspace
/// dimension not below the feature dimension, are recorded and skipped.
pub fn sweep(
    base: &MethodConfig,
    grid: &Grid,
    ctx: &FitContext<'_>,
    val_id: &DumpData,
    val_ood: &[&DumpData],
) -> Result<SweepOutcome> {
    if val_ood.is_empty() {
        return Err(OodError::Empty("validation OoD splits"));
    }
    let points = grid_points(base, grid)?;
    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, Option<MethodStats>)> = None;
    for (i, cfg) in points.into_iter().enumerate() {
        match evaluate(&cfg, ctx, val_id, val_ood) {
            Ok((a, stats)) => {
                if best.as_ref().is_none_or(|(_, b, _)| a > *b) {
                    best = Some((i, a, stats));
                }
                table.push(GridPoint {
                    config: cfg,
                    auroc: Some(a),
                    error: None,
                });
            }
            Err(e) => table.push(GridPoint {
                config: cfg,
                auroc: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((i, _, stats)) => Ok(SweepOutcome {
            selected: table[i].config.clone(),
            table,
            stats,
        }),
        None => Err(OodError::InvalidConfig(format!(
            "no grid point of {} could be evaluated: {}",
            base.method,
            table
                .iter()
                .filter_map(|p| p.error.as_deref())
                .next()
                .unwrap_or("no points")
        ))),
    }
}
