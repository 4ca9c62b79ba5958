//! The benchmark protocol over a manifest.
//!
//! Each (backbone, seed) cell runs in four phases: load the head and ID
//! train/val dumps, split every OoD dump into a tuning and a test part, sweep
//! hyperparameters on validation data only, then score the ID test split and
//! the OoD test parts. Cells run in parallel; the report is assembled in
//! manifest order so it does not depend on scheduling.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LinearHead;
use crate::error::{OodError, Result};
use crate::fit::{fit_method, FitContext, FittedStats, MethodStats};
use crate::harness::derive_seed;
use crate::harness::access::{AccessGuard, AccessRecord, Phase};
use crate::harness::sweep::{sweep, DumpData, GridPoint, SweepPlan};
use crate::io::manifest::{dataset_name, Manifest, RunSpec};
use crate::io::Dump;
use crate::metrics::{accuracy, summarize, MetricRow, Summary};
use crate::scores::{score_dump, Method, MethodConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Fraction of every OoD dataset held out for tuning.
    pub tune_fraction: f64,
    /// Stop every cell after hyperparameter selection; no test dump is read.
    pub sweep_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tune_fraction: 0.2,
            sweep_only: false,
        }
    }
}

/// Group-level metrics of one method in one cell: the mean over the group's
/// datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub method: Method,
    pub backbone: String,
    pub seed: u64,
    pub group: String,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub method: Method,
    pub backbone: String,
    pub seed: u64,
    pub group: String,
    pub dataset: String,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: Method,
    pub backbone: String,
    pub seed: u64,
    pub selected: MethodConfig,
    pub table: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub backbone: String,
    pub seed: u64,
    /// `None` when the whole cell failed.
    pub method: Option<Method>,
    pub phase: Phase,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub backbone: String,
    pub group: String,
    pub summary: Summary,
}

/// An aggregate that was not computed because some seeds are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingAggregate {
    pub method: Method,
    pub backbone: String,
    pub group: String,
    pub have: usize,
    pub want: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    /// Every group whose name starts with `far`.
    Far,
    /// The `near` group.
    Near,
}

impl Benchmark {
    pub fn includes(self, group: &str) -> bool {
        match self {
            Benchmark::Far => group.starts_with("far"),
            Benchmark::Near => group == "near",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Benchmark::Far => "Far-OoD",
            Benchmark::Near => "Near-OoD",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestBackbone {
    pub method: Method,
    pub benchmark: Benchmark,
    pub backbone: String,
    /// Mean over the benchmark's groups of the seed-averaged AUROC.
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub backbones: Vec<String>,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodConfig>,
    pub groups: Vec<String>,
    pub rows: Vec<CellRow>,
    pub datasets: Vec<DatasetRow>,
    pub sweeps: Vec<SweepRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub missing: Vec<MissingAggregate>,
    pub best: Vec<BestBackbone>,
    pub failures: Vec<Failure>,
}

impl EvalReport {
    pub fn aggregate(&self, method: Method, backbone: &str, group: &str) -> Option<&Summary> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.backbone == backbone && a.group == group)
            .map(|a| &a.summary)
    }

    pub fn best_for(&self, method: Method, benchmark: Benchmark) -> Option<&BestBackbone> {
        self.best
            .iter()
            .find(|b| b.method == method && b.benchmark == benchmark)
    }

    /// Recomputes aggregates, missing entries and best backbones from `rows`.
    pub fn finalize(&mut self) -> Result<()> {
        self.aggregates.clear();
        self.missing.clear();
        self.best.clear();
        let want = self.seeds.len();
        for cfg in &self.methods {
            let m = cfg.method;
            for b in &self.backbones {
                for g in &self.groups {
                    let runs: Vec<MetricRow> = self
                        .rows
                        .iter()
                        .filter(|r| r.method == m && &r.backbone == b && &r.group == g)
                        .map(|r| r.metrics)
                        .collect();
                    if runs.len() == want && want > 0 {
                        self.aggregates.push(AggregateRow {
                            method: m,
                            backbone: b.clone(),
                            group: g.clone(),
                            summary: summarize(&runs)?,
                        });
                    } else {
                        self.missing.push(MissingAggregate {
                            method: m,
                            backbone: b.clone(),
                            group: g.clone(),
                            have: runs.len(),
                            want,
                        });
                    }
                }
            }
        }
        for bench in [Benchmark::Far, Benchmark::Near] {
            let groups: Vec<&String> = self.groups.iter().filter(|g| bench.includes(g)).collect();
            if groups.is_empty() {
                continue;
            }
            for cfg in &self.methods {
                let m = cfg.method;
                let mut best: Option<(String, f64)> = None;
                for b in &self.backbones {
                    let vals: Option<Vec<f64>> = groups
                        .iter()
                        .map(|g| self.aggregate(m, b, g).map(|s| s.auroc.mean))
                        .collect();
                    let Some(vals) = vals else { continue };
                    let avg = vals.iter().sum::<f64>() / vals.len() as f64;
                    if best.as_ref().is_none_or(|(_, a)| avg > *a) {
                        best = Some((b.clone(), avg));
                    }
                }
                if let Some((backbone, auroc)) = best {
                    self.best.push(BestBackbone {
                        method: m,
                        benchmark: bench,
                        backbone,
                        auroc,
                    });
                }
            }
        }
        Ok(())
    }
}

/// File accesses of one cell, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccessLog {
    pub backbone: String,
    pub seed: u64,
    pub protected: Vec<PathBuf>,
    pub records: Vec<AccessRecord>,
}

#[derive(Default)]
struct CellResult {
    rows: Vec<CellRow>,
    datasets: Vec<DatasetRow>,
    sweeps: Vec<SweepRecord>,
    failures: Vec<Failure>,
    log: Option<CellAccessLog>,
}

struct OodDataset {
    group: String,
    name: String,
    tune: DumpData,
    test: DumpData,
}

fn split_seed(seed: u64, group: &str, dataset: &str) -> u64 {
    derive_seed(&format!("split/{seed}/{group}/{dataset}"))
}

/// Seeded split of `0..n` into sorted (tune, test) index lists.
pub fn tune_test_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(OodError::InvalidData(format!(
            "an OoD dataset needs at least 2 samples to split, got {n}"
        )));
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tune = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    tune.sort_unstable();
    test.sort_unstable();
    Ok((tune, test))
}

fn to_data(d: Dump) -> DumpData {
    DumpData::new(d.features, d.aug)
}

fn mean_rows(rows: &[MetricRow]) -> MetricRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricRow {
        fpr95_id: avg(|r| r.fpr95_id),
        fpr95_ood: avg(|r| r.fpr95_ood),
        fpr99_id: avg(|r| r.fpr99_id),
        fpr99_ood: avg(|r| r.fpr99_ood),
        auroc: avg(|r| r.auroc),
        acc: rows[0].acc,
        n_id: rows[0].n_id,
        n_ood: rows.iter().map(|r| r.n_ood).sum(),
    }
}

struct Prepared {
    method: Method,
    config: MethodConfig,
    stats: Option<MethodStats>,
}

fn run_cell(
    manifest: &Manifest,
    run: &RunSpec,
    methods: &[MethodConfig],
    plan: &SweepPlan,
    opts: RunOptions,
) -> CellResult {
    let mut out = CellResult::default();
    let protected: Vec<PathBuf> = run.test_paths().map(|p| manifest.resolve(p)).collect();
    let guard = AccessGuard::new(protected.clone());
    let fail = |method: Option<Method>, phase: Phase, e: &OodError| Failure {
        backbone: run.backbone.clone(),
        seed: run.seed,
        method,
        phase,
        message: e.to_string(),
    };

    let body = |out: &mut CellResult| -> std::result::Result<(), Failure> {
        guard.enter(Phase::Fit);
        let loaded = (|| -> Result<(LinearHead, DumpData, DumpData)> {
            let head = guard.read_head(&manifest.resolve(&run.head))?;
            let train = to_data(guard.read_dump(&manifest.resolve(&run.id_train))?);
            let val = to_data(guard.read_dump(&manifest.resolve(&run.id_val))?);
            Ok((head, train, val))
        })();
        let (head, train, val) = loaded.map_err(|e| fail(None, Phase::Fit, &e))?;

        guard.enter(Phase::Split);
        let mut ood = Vec::new();
        for (group, paths) in &run.ood_groups {
            for p in paths {
                let name = dataset_name(p);
                let split = (|| -> Result<OodDataset> {
                    let data = to_data(guard.read_dump(&manifest.resolve(p))?);
                    let seed = split_seed(run.seed, group, &name);
                    let (tune, test) = tune_test_split(data.len(), opts.tune_fraction, seed)?;
                    Ok(OodDataset {
                        group: group.clone(),
                        name: name.clone(),
                        tune: data.select(&tune),
                        test: data.select(&test),
                    })
                })();
                ood.push(split.map_err(|e| fail(None, Phase::Split, &e))?);
            }
        }

        guard.enter(Phase::Sweep);
        let ctx = FitContext {
            train: &train.features,
            val: Some(&val.features),
            head: Some(&head),
            seed: run.seed,
        };
        let val_ood: Vec<&DumpData> = ood.iter().map(|d| &d.tune).collect();
        let prepared: Vec<std::result::Result<(Prepared, Option<SweepRecord>), Failure>> = methods
            .par_iter()
            .map(|base| {
                let m = base.method;
                match plan.grid(m) {
                    Some(grid) => {
                        let o = sweep(base, grid, &ctx, &val, &val_ood)
                            .map_err(|e| fail(Some(m), Phase::Sweep, &e))?;
                        let record = SweepRecord {
                            method: m,
                            backbone: run.backbone.clone(),
                            seed: run.seed,
                            selected: o.selected.clone(),
                            table: o.table,
                        };
                        Ok((
                            Prepared {
                                method: m,
                                config: o.selected,
                                stats: o.stats,
                            },
                            Some(record),
                        ))
                    }
                    None => {
                        let stats = fit_method(base, &ctx).map_err(|e| fail(Some(m), Phase::Fit, &e))?;
                        Ok((
                            Prepared {
                                method: m,
                                config: base.clone(),
                                stats,
                            },
                            None,
                        ))
                    }
                }
            })
            .collect();
        let mut ready = Vec::new();
        for p in prepared {
            match p {
                Ok((p, rec)) => {
                    out.sweeps.extend(rec);
                    ready.push(p);
                }
                Err(f) => out.failures.push(f),
            }
        }
        if opts.sweep_only {
            return Ok(());
        }

        guard.enter(Phase::Test);
        let id_test = guard
            .read_dump(&manifest.resolve(&run.id_test))
            .map(to_data)
            .map_err(|e| fail(None, Phase::Test, &e))?;
        let acc = match &id_test.features.labels {
            Some(labels) => Some(
                id_test
                    .features
                    .logits_or(Some(&head), Method::Msp)
                    .and_then(|l| accuracy(&l, labels))
                    .map_err(|e| fail(None, Phase::Test, &e))?,
            ),
            None => None,
        };
        let num_classes = head.num_classes();
        let scored: Vec<std::result::Result<(Vec<CellRow>, Vec<DatasetRow>), Failure>> = ready
            .par_iter()
            .map(|p| {
                let m = p.method;
                let result = (|| -> Result<(Vec<CellRow>, Vec<DatasetRow>)> {
                    let mut stats = FittedStats::new(train.features.dim(), num_classes);
                    if let Some(s) = &p.stats {
                        stats.insert(s.clone());
                    }
                    let id_scores = score_dump(&p.config, &stats, id_test.inputs(&ctx))?.scores;
                    let mut datasets = Vec::new();
                    for d in &ood {
                        let s = score_dump(&p.config, &stats, d.test.inputs(&ctx))?.scores;
                        datasets.push(DatasetRow {
                            method: m,
                            backbone: run.backbone.clone(),
                            seed: run.seed,
                            group: d.group.clone(),
                            dataset: d.name.clone(),
                            metrics: MetricRow::compute(&id_scores, &s, acc)?,
                        });
                    }
                    let groups: BTreeSet<&String> = datasets.iter().map(|d| &d.group).collect();
                    let rows = groups
                        .into_iter()
                        .map(|g| {
                            let per: Vec<MetricRow> = datasets
                                .iter()
                                .filter(|d| &d.group == g)
                                .map(|d| d.metrics)
                                .collect();
                            CellRow {
                                method: m,
                                backbone: run.backbone.clone(),
                                seed: run.seed,
                                group: g.clone(),
                                metrics: mean_rows(&per),
                            }
                        })
                        .collect();
                    Ok((rows, datasets))
                })();
                result.map_err(|e| fail(Some(m), Phase::Test, &e))
            })
            .collect();
        for s in scored {
            match s {
                Ok((rows, datasets)) => {
                    out.rows.extend(rows);
                    out.datasets.extend(datasets);
                }
                Err(f) => out.failures.push(f),
            }
        }
        Ok(())
    };

    if let Err(f) = body(&mut out) {
        out.failures.push(f);
    }
    out.log = Some(CellAccessLog {
        backbone: run.backbone.clone(),
        seed: run.seed,
        protected,
        records: guard.log(),
    });
    out
}

/// Runs the protocol and also returns every cell's file-access log.
pub fn run_benchmark_instrumented(
    manifest: &Manifest,
    methods: &[MethodConfig],
    plan: &SweepPlan,
    opts: RunOptions,
) -> Result<(EvalReport, Vec<CellAccessLog>)> {
    manifest.validate()?;
    plan.validate()?;
    if !(opts.tune_fraction > 0.0 && opts.tune_fraction < 1.0) {
        return Err(OodError::InvalidArgument(format!(
            "tune fraction {} outside (0, 1)",
            opts.tune_fraction
        )));
    }
    let mut seen = BTreeSet::new();
    for cfg in methods {
        cfg.validate()?;
        if !seen.insert(cfg.method) {
            return Err(OodError::InvalidArgument(format!("{} listed twice", cfg.method)));
        }
    }

    let cells: Vec<(usize, usize)> = (0..manifest.backbones.len())
        .flat_map(|b| (0..manifest.seeds.len()).map(move |s| (b, s)))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(b, s)| {
            let (backbone, seed) = (&manifest.backbones[b], manifest.seeds[s]);
            match manifest.run(backbone, seed) {
                Some(run) => run_cell(manifest, run, methods, plan, opts),
                None => CellResult {
                    failures: vec![Failure {
                        backbone: backbone.clone(),
                        seed,
                        method: None,
                        phase: Phase::Fit,
                        message: "no run in manifest".into(),
                    }],
                    ..Default::default()
                },
            }
        })
        .collect();

    let mut report = EvalReport {
        backbones: manifest.backbones.clone(),
        seeds: manifest.seeds.clone(),
        methods: methods.to_vec(),
        groups: manifest.group_names(),
        ..Default::default()
    };
    let mut logs = Vec::new();
    for r in results {
        report.rows.extend(r.rows);
        report.datasets.extend(r.datasets);
        report.sweeps.extend(r.sweeps);
        report.failures.extend(r.failures);
        logs.extend(r.log);
    }
    let method_pos = |m: Method| methods.iter().position(|c| c.method == m).unwrap_or(usize::MAX);
    let backbone_pos = |b: &str| manifest.backbones.iter().position(|x| x == b).unwrap_or(usize::MAX);
    let seed_pos = |s: u64| manifest.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    report.rows.sort_by(|a, b| {
        (method_pos(a.method), backbone_pos(&a.backbone), seed_pos(a.seed), &a.group).cmp(&(
            method_pos(b.method),
            backbone_pos(&b.backbone),
            seed_pos(b.seed),
            &b.group,
        ))
    });
    report.datasets.sort_by(|a, b| {
        (method_pos(a.method), backbone_pos(&a.backbone), seed_pos(a.seed), &a.group, &a.dataset).cmp(&(
            method_pos(b.method),
            backbone_pos(&b.backbone),
            seed_pos(b.seed),
            &b.group,
            &b.dataset,
        ))
    });
    report.sweeps.sort_by_key(|s| (method_pos(s.method), backbone_pos(&s.backbone), seed_pos(s.seed)));
    report.failures.sort_by_key(|f| {
        (
            backbone_pos(&f.backbone),
            seed_pos(f.seed),
            f.method.map_or(0, |m| method_pos(m) + 1),
        )
    });
    report.finalize()?;
    Ok((report, logs))
}

pub fn run_benchmark(
    manifest: &Manifest,
    methods: &[MethodConfig],
    plan: &SweepPlan,
    opts: RunOptions,
) -> Result<EvalReport> {
    run_benchmark_instrumented(manifest, methods, plan, opts).map(|(r, _)| r)
}
