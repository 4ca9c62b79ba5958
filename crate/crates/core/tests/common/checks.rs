//! Criterion checks shared by the acceptance runner and the topic tests. Each
//! returns a pass flag and a one-line detail.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oodkit::fit::{
    fit_all, fit_background_gaussian, fit_class_covariance_invs, fit_class_means, fit_shared_cov_inv,
    fit_temperature, fit_weibull, DiceMask, FitContext, FittedStats, KnnIndex, MethodStats, OpenMaxModel,
    PrincipalSubspace, Prototypes, ShePatterns, WeibullTail,
};
use oodkit::harness::{
    emit_report, generate_cell, gen_synthetic_benchmark, render_csv, default_sweep_plan, run_benchmark_instrumented,
    DumpData, Phase, RunOptions, SynthSpec,
};
use oodkit::linalg::Matrix;
use oodkit::metrics::{auroc, fpr_at_tpr, spearman_rho};
use oodkit::scores::{score_dump, Method, MethodConfig, Param, ParamValue, ScoreInputs};
use oodkit::FeatureSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    fixture, gaussian, gaussian_rows, matrix, max_abs_dev, oracle, random_orthonormal, random_spd, unit_rows,
    Instance, Rows,
};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self::new(false, detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- metrics

fn score_sample(rng: &mut ChaCha8Rng, n: usize, tied: bool, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if tied {
                rng.random_range(0..6) as f64 + if rng.random_bool(0.3) { 1.0 } else { 0.0 }
            } else {
                gaussian(rng) + shift
            }
        })
        .collect()
}

pub fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_auroc = 0.0f64;
    let mut fpr_mismatch = 0;
    for _ in 0..100 {
        let (np, nn) = (rng.random_range(1..=200), rng.random_range(1..=200));
        let tied = rng.random_bool(0.5);
        let shift = rng.random_range(-1.0..2.0);
        let pos = score_sample(&mut rng, np, tied, shift);
        let neg = score_sample(&mut rng, nn, tied, 0.0);
        let a = auroc(&pos, &neg).unwrap();
        worst_auroc = worst_auroc.max((a - oracle::auroc_pairs(&pos, &neg)).abs());
        for (target, pct) in [(0.95, 95), (0.99, 99), (0.5, 50), (1.0, 100)] {
            if fpr_at_tpr(&pos, &neg, target).unwrap() != oracle::fpr_scan(&pos, &neg, pct) {
                fpr_mismatch += 1;
            }
        }
    }
    let took = start.elapsed();
    Outcome::new(
        worst_auroc <= 1e-12 && fpr_mismatch == 0 && took < Duration::from_secs(10),
        format!(
            "100 instances, max |AUROC - pairwise| = {worst_auroc:.1e}, FPR mismatches = {fpr_mismatch}, {}",
            secs(took)
        ),
    )
}

pub fn spearman_oracle() -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut trials = 0;
    while trials < 200 {
        let n = rng.random_range(3..=120);
        let tied = rng.random_bool(0.5);
        let x = score_sample(&mut rng, n, tied, 0.0);
        let y: Vec<f64> = x.iter().map(|v| v + 0.8 * gaussian(&mut rng)).collect();
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(&x) || constant(&y) {
            continue;
        }
        let rho = spearman_rho(&x, &y).unwrap();
        let want = oracle::pearson(&oracle::midranks(&x), &oracle::midranks(&y));
        worst = worst.max((rho - want).abs());
        trials += 1;
    }
    (worst, trials)
}

// ---------------------------------------------------------------- scores

fn scores_of(cfg: &MethodConfig, stats: &FittedStats, inst: &Instance, fs: &FeatureSet) -> Vec<f64> {
    let head = inst.head();
    let aug = inst.aug();
    score_dump(cfg, stats, ScoreInputs::new(fs, Some(&head)).with_aug(Some(&aug)))
        .unwrap_or_else(|e| panic!("{} failed: {e}", cfg.method))
        .scores
}

fn single(inst: &Instance, s: MethodStats) -> FittedStats {
    let mut f = FittedStats::new(inst.d, inst.c);
    f.insert(s);
    f
}

fn subspace(rng: &mut ChaCha8Rng, d: usize) -> (PrincipalSubspace, Rows, Vec<f64>) {
    let k = rng.random_range(1..d);
    let basis = random_orthonormal(rng, d, k);
    let mean: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let s = PrincipalSubspace {
        mean: mean.clone(),
        basis: matrix(&basis),
        eigenvalues: vec![1.0; k],
    };
    (s, basis, mean)
}

/// Max deviation per identity over 1000 random trials.
pub fn reduction_identities() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let names = [
        "TempScale(T=1) = MSP",
        "ViM(alpha=0) = Energy(T=1)",
        "DICE(all-ones) = Energy(T=1)",
        "ASH(p=0) = Energy(T=1)",
        "ReAct(b=max) = MSP",
        "Mahalanobis(Sigma=I) = -min squared distance",
        "SHE(C=1) = inner product",
        "Residual = ViM(alpha=1) - LSE",
    ];
    let mut worst = [0.0f64; 8];
    let empty = FittedStats::default();
    let msp = MethodConfig::new(Method::Msp);
    let energy = MethodConfig::new(Method::Energy);
    for _ in 0..1000 {
        let inst = Instance::random(&mut rng);
        let fs = inst.features();
        let plain = FeatureSet::new(matrix(&inst.z));
        let (d, c) = (inst.d, inst.c);
        let mut dev = |i: usize, a: &[f64], b: &[f64]| worst[i] = worst[i].max(max_abs_dev(a, b));

        let t1 = single(&inst, MethodStats::Tempscale { temperature: 1.0 });
        dev(0, &scores_of(&MethodConfig::new(Method::Tempscale), &t1, &inst, &fs), &scores_of(&msp, &empty, &inst, &fs));

        let (sub, _, _) = subspace(&mut rng, d);
        let vim0 = single(&inst, MethodStats::Vim { subspace: sub.clone(), alpha: 0.0 });
        let e_fs = scores_of(&energy, &empty, &inst, &fs);
        dev(1, &scores_of(&MethodConfig::new(Method::Vim), &vim0, &inst, &fs), &e_fs);

        let e_head = scores_of(&energy, &empty, &inst, &plain);
        let ones = single(
            &inst,
            MethodStats::Dice(DiceMask {
                mask: matrix(&vec![vec![1.0; d]; c]),
                sparsity: 0.0,
                degenerate: false,
            }),
        );
        dev(2, &scores_of(&MethodConfig::new(Method::Dice), &ones, &inst, &plain), &e_head);

        let ash0 = MethodConfig::new(Method::Ash).with(Param::Percentile, 0.0).unwrap();
        dev(3, &scores_of(&ash0, &empty, &inst, &plain), &e_head);

        let zmax = inst.z.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let react = single(&inst, MethodStats::React { threshold: zmax });
        dev(
            4,
            &scores_of(&MethodConfig::new(Method::React), &react, &inst, &plain),
            &scores_of(&msp, &empty, &inst, &plain),
        );

        let means = gaussian_rows(&mut rng, c, d, 1.0);
        let maha = single(
            &inst,
            MethodStats::Mahalanobis {
                class_means: matrix(&means),
                shared_cov_inv: Matrix::identity(d),
            },
        );
        let nearest: Vec<f64> = inst
            .z
            .iter()
            .map(|zi| {
                -means
                    .iter()
                    .map(|mu| zi.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        dev(5, &scores_of(&MethodConfig::new(Method::Mahalanobis), &maha, &inst, &fs), &nearest);

        let s: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let beta = rng.random_range(0.25..4.0);
        let she = FittedStats {
            num_classes: 1,
            ..single(
                &inst,
                MethodStats::She(ShePatterns {
                    patterns: matrix(&vec![s.clone()]),
                    fallback_classes: vec![],
                }),
            )
        };
        let she_cfg = MethodConfig::new(Method::She).with(Param::Beta, beta).unwrap();
        let inner: Vec<f64> = inst.z.iter().map(|zi| zi.iter().zip(&s).map(|(a, b)| a * b).sum()).collect();
        let one_class = FeatureSet::new(matrix(&inst.z));
        dev(6, &scores_of(&she_cfg, &she, &inst, &one_class), &inner);

        let vim1 = single(&inst, MethodStats::Vim { subspace: sub.clone(), alpha: 1.0 });
        let res = single(&inst, MethodStats::Residual(sub));
        let v1 = scores_of(&MethodConfig::new(Method::Vim), &vim1, &inst, &fs);
        let minus_lse: Vec<f64> = v1.iter().zip(&inst.logits).map(|(v, f)| v - oracle::lse(f)).collect();
        dev(7, &scores_of(&MethodConfig::new(Method::Residual), &res, &inst, &fs), &minus_lse);
    }
    names.into_iter().zip(worst).collect()
}

pub fn reduction_outcome() -> Outcome {
    let rows = reduction_identities();
    let bad: Vec<String> = rows
        .iter()
        .filter(|(_, d)| !(*d <= 1e-9))
        .map(|(n, d)| format!("{n} ({d:.1e})"))
        .collect();
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if bad.is_empty() {
        Outcome::new(true, format!("8 identities x 1000 trials, max deviation {worst:.1e}"))
    } else {
        Outcome::fail(format!("over 1e-9: {}", bad.join(", ")))
    }
}

/// One random case: config, the section it reads, and the oracle's scores.
fn case(m: Method, inst: &Instance, rng: &mut ChaCha8Rng) -> (MethodConfig, Option<MethodStats>, Vec<f64>) {
    let (n, d, c) = (inst.n, inst.d, inst.c);
    let (z, f, w, b) = (&inst.z, &inst.logits, &inst.w, &inst.b);
    let hl = inst.head_logits();
    let cfg = MethodConfig::new(m);
    let each = |g: &dyn Fn(usize) -> f64| (0..n).map(g).collect::<Vec<f64>>();
    match m {
        Method::Msp => (cfg, None, each(&|i| oracle::msp(&f[i]))),
        Method::Mls => (cfg, None, each(&|i| oracle::mls(&f[i]))),
        Method::Energy => {
            let t = rng.random_range(0.2..5.0);
            let cfg = cfg.with(Param::Temperature, t).unwrap();
            (cfg, None, each(&|i| oracle::energy(&f[i], t)))
        }
        Method::Gen => {
            let gamma = rng.random_range(0.01..0.99);
            let mut cfg = cfg.with(Param::Gamma, gamma).unwrap();
            let mut top = c;
            if rng.random_bool(0.5) {
                top = rng.random_range(1..=c + 2);
                cfg = cfg.with(Param::TopM, top as f64).unwrap();
            }
            (cfg, None, each(&|i| oracle::gen(&f[i], gamma, top)))
        }
        Method::Tempscale => {
            let t = rng.random_range(0.05..20.0);
            let s = MethodStats::Tempscale { temperature: t };
            (cfg, Some(s), each(&|i| oracle::tempscale(&f[i], t)))
        }
        Method::Mcdropout => (cfg, None, each(&|i| oracle::mcdropout(&inst.stack[i]))),
        Method::Odin => {
            let t = rng.random_range(0.5..1500.0);
            let cfg = cfg.with(Param::Temperature, t).unwrap();
            (cfg, None, each(&|i| oracle::tempscale(&inst.odin[i], t)))
        }
        Method::Klm => {
            let mut protos: Rows = (0..c)
                .map(|_| {
                    let v: Vec<f64> = (0..c).map(|_| 2.0 * gaussian(rng)).collect();
                    oracle::softmax(&v, 1.0)
                })
                .collect();
            if rng.random_bool(0.3) {
                let k = rng.random_range(0..c);
                protos[k][rng.random_range(0..c)] = 0.0;
            }
            let s = MethodStats::Klm(Prototypes {
                distributions: matrix(&protos),
                empty_classes: vec![],
            });
            (cfg, Some(s), each(&|i| oracle::klmatch(&f[i], &protos)))
        }
        Method::Gradnorm => (cfg, None, each(&|i| oracle::gradnorm(&z[i], &f[i]))),
        Method::Mahalanobis => {
            let means = gaussian_rows(rng, c, d, 1.0);
            let prec = random_spd(rng, d, 0.5);
            let s = MethodStats::Mahalanobis {
                class_means: matrix(&means),
                shared_cov_inv: matrix(&prec),
            };
            (cfg, Some(s), each(&|i| oracle::mahalanobis(&z[i], &means, &prec)))
        }
        Method::Rmds => {
            let means = gaussian_rows(rng, c, d, 1.0);
            let precs: Vec<Rows> = (0..c).map(|_| random_spd(rng, d, 0.5)).collect();
            let mu0: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            let prec0 = random_spd(rng, d, 0.5);
            let s = MethodStats::Rmds {
                class_means: matrix(&means),
                class_cov_invs: precs.iter().map(matrix).collect(),
                background_mean: mu0.clone(),
                background_cov_inv: matrix(&prec0),
            };
            (cfg, Some(s), each(&|i| oracle::rmds(&z[i], &means, &precs, &mu0, &prec0)))
        }
        Method::Knn => {
            let m = rng.random_range(1..=30);
            let pts = unit_rows(rng, m, d);
            let k = rng.random_range(1..=m);
            let cfg = cfg.with(Param::K, k as f64).unwrap();
            let s = MethodStats::Knn(KnnIndex::from_normalized(matrix(&pts)));
            (cfg, Some(s), each(&|i| oracle::knn(&z[i], &pts, k)))
        }
        Method::Relation => {
            let m = rng.random_range(1..=30);
            let pts = unit_rows(rng, m, d);
            let pow = rng.random_range(1.0..10.0);
            let cfg = cfg.with(Param::Pow, pow).unwrap();
            let s = MethodStats::Relation(KnnIndex::from_normalized(matrix(&pts)));
            (cfg, Some(s), each(&|i| oracle::relation(&z[i], &pts, pow)))
        }
        Method::Fdbd => {
            let mu: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            let dist = rng.random_bool(0.5);
            let neg = rng.random_bool(0.5);
            let cfg = cfg
                .with_flag(Param::DistanceAsNormalizer, dist)
                .unwrap()
                .with_flag(Param::Negate, neg)
                .unwrap();
            let sign = if neg { -1.0 } else { 1.0 };
            let s = MethodStats::Fdbd { train_mean: mu.clone() };
            (cfg, Some(s), each(&|i| sign * oracle::fdbd(&z[i], w, b, &mu, dist)))
        }
        Method::Vim => {
            let (sub, basis, mean) = subspace(rng, d);
            let alpha = rng.random_range(0.0..5.0);
            let s = MethodStats::Vim { subspace: sub, alpha };
            (cfg, Some(s), each(&|i| oracle::vim(&z[i], &f[i], &mean, &basis, alpha)))
        }
        Method::Residual => {
            let (sub, basis, mean) = subspace(rng, d);
            let s = MethodStats::Residual(sub);
            (cfg, Some(s), each(&|i| -oracle::residual_norm(&z[i], &mean, &basis)))
        }
        Method::Rankfeat => (cfg, None, oracle::rankfeat(z, w, b)),
        Method::React => {
            let clamp = rng.random_range(0.3..2.5);
            let t = rng.random_range(0.5..3.0);
            let use_energy = rng.random_bool(0.5);
            let mut cfg = cfg.with(Param::Temperature, t).unwrap();
            if use_energy {
                cfg.set(Param::Scorer, ParamValue::Choice("energy".into())).unwrap();
            }
            let s = MethodStats::React { threshold: clamp };
            (cfg, Some(s), each(&|i| oracle::react(&z[i], w, b, clamp, t, use_energy)))
        }
        Method::Ash => {
            let mut p = rng.random_range(0.0..100.0);
            if (d as f64 * p / 100.0).round() as usize >= d {
                p = 0.0;
            }
            let cfg = cfg.with(Param::Percentile, p).unwrap();
            (cfg, None, each(&|i| oracle::ash(&z[i], w, b, p)))
        }
        Method::Dice => {
            let mask: Rows = (0..c)
                .map(|_| (0..d).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
                .collect();
            let s = MethodStats::Dice(DiceMask {
                mask: matrix(&mask),
                sparsity: 50.0,
                degenerate: false,
            });
            (cfg, Some(s), each(&|i| oracle::dice(&z[i], w, b, &mask)))
        }
        Method::She => {
            let patterns = gaussian_rows(rng, c, d, 0.5);
            let beta = rng.random_range(0.5..3.0);
            let cfg = cfg.with(Param::Beta, beta).unwrap();
            let s = MethodStats::She(ShePatterns {
                patterns: matrix(&patterns),
                fallback_classes: vec![],
            });
            (cfg, Some(s), each(&|i| oracle::she(&z[i], &patterns, beta)))
        }
        Method::Openmax => {
            let mavs = gaussian_rows(rng, c, c, 3.0);
            let tails: Vec<Option<(f64, f64)>> = (0..c)
                .map(|_| {
                    rng.random_bool(0.8)
                        .then(|| (rng.random_range(0.5..4.0), rng.random_range(0.5..8.0)))
                })
                .collect();
            let alpha_top = rng.random_range(1..=c + 1);
            let s = MethodStats::Openmax(OpenMaxModel {
                mavs: matrix(&mavs),
                tails: tails
                    .iter()
                    .map(|t| t.map(|(shape, scale)| WeibullTail { shape, scale }))
                    .collect(),
                tail_sizes: vec![20; c],
                alpha_top,
                flagged: vec![],
            });
            (cfg, Some(s), each(&|i| oracle::openmax(&hl[i], &mavs, &tails, alpha_top)))
        }
    }
}

pub fn tolerance(m: Method) -> f64 {
    if m == Method::Rankfeat {
        1e-6
    } else {
        1e-8
    }
}

/// Max deviation between the library and the straight-line oracle for `m`.
pub fn brute_force_method(m: Method, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inst = Instance::random(&mut rng);
        let (cfg, section, want) = case(m, &inst, &mut rng);
        let mut stats = FittedStats::new(inst.d, inst.c);
        if let Some(s) = section {
            stats.insert(s);
        }
        let got = scores_of(&cfg, &stats, &inst, &inst.features());
        let dev = max_abs_dev(&got, &want);
        worst = worst.max(if dev.is_nan() { f64::INFINITY } else { dev });
    }
    worst
}

pub const BRUTE_FORCE_TRIALS: usize = 50;

pub fn brute_force_outcome() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_rf = 0.0f64;
    for (i, m) in Method::ALL.into_iter().enumerate() {
        let dev = brute_force_method(m, BRUTE_FORCE_TRIALS, 100 + i as u64);
        if m == Method::Rankfeat {
            worst_rf = dev;
        } else {
            worst = worst.max(dev);
        }
        if !(dev <= tolerance(m)) {
            bad.push(format!("{} ({dev:.1e})", m.id()));
        }
    }
    let took = start.elapsed();
    let mut detail = format!(
        "22 methods x {BRUTE_FORCE_TRIALS} instances, max deviation {worst:.1e}, RankFeat {worst_rf:.1e}, {}",
        secs(took)
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; over tolerance: {}", bad.join(", ")));
    }
    Outcome::new(bad.is_empty() && took < Duration::from_secs(60), detail)
}

// ---------------------------------------------------------------- synthetic

pub fn all_methods(d: usize) -> Vec<MethodConfig> {
    Method::ALL
        .into_iter()
        .map(|m| {
            let cfg = MethodConfig::new(m);
            if matches!(m, Method::Vim | Method::Residual) {
                cfg.with(Param::Dim, (d / 2) as f64).unwrap()
            } else {
                cfg
            }
        })
        .collect()
}

pub fn separability_spec(near: f64, far: f64) -> SynthSpec {
    SynthSpec {
        train_per_class: 1000,
        val_per_class: 200,
        test_per_class: 500,
        ood_per_dataset: 2000,
        datasets_per_group: 1,
        near_shift: near,
        far_shift: far,
        heavy_tail_general: false,
        backbones: vec!["synth".into()],
        seeds: vec![0],
        ..Default::default()
    }
}

/// AUROC of every method against each OoD group of one synthetic cell.
pub fn group_aurocs(spec: &SynthSpec, methods: &[MethodConfig]) -> Vec<(Method, Vec<(String, f64)>)> {
    let cell = generate_cell(spec, 0, spec.seeds[0]).unwrap();
    let ctx = FitContext {
        train: &cell.train.features,
        val: Some(&cell.val.features),
        head: Some(&cell.head),
        seed: 0,
    };
    methods
        .iter()
        .map(|cfg| {
            let stats = fit_all(std::slice::from_ref(cfg), &ctx).unwrap();
            let id = score_dump(cfg, &stats, cell.test.inputs(&ctx)).unwrap().scores;
            let groups = cell
                .ood
                .iter()
                .map(|(g, _, data)| {
                    let s = score_dump(cfg, &stats, data.inputs(&ctx)).unwrap().scores;
                    (g.clone(), auroc(&id, &s).unwrap())
                })
                .collect();
            (cfg.method, groups)
        })
        .collect()
}

fn far_mean(groups: &[(String, f64)]) -> f64 {
    let far: Vec<f64> = groups.iter().filter(|(g, _)| g.starts_with("far")).map(|g| g.1).collect();
    far.iter().sum::<f64>() / far.len() as f64
}

fn group_value(groups: &[(String, f64)], name: &str) -> f64 {
    groups.iter().find(|(g, _)| g == name).map(|g| g.1).unwrap()
}

pub fn separability() -> Outcome {
    let start = Instant::now();
    let d = SynthSpec::default().dim;
    let mut notes = Vec::new();
    let mut pass = true;

    let null = group_aurocs(&separability_spec(0.0, 0.0), &all_methods(d));
    let (lo, hi) = null
        .iter()
        .flat_map(|(_, g)| g.iter().map(|x| x.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let outside: Vec<&str> = null
        .iter()
        .filter(|(_, g)| g.iter().any(|x| !(47.0..=53.0).contains(&x.1)))
        .map(|(m, _)| m.id())
        .collect();
    pass &= outside.is_empty();
    notes.push(format!("no shift: AUROC in [{lo:.2}, {hi:.2}]"));
    if !outside.is_empty() {
        notes.push(format!("outside [47, 53]: {}", outside.join(",")));
    }

    let key = [Method::Mahalanobis, Method::Knn, Method::Vim];
    let cfgs: Vec<MethodConfig> = all_methods(d).into_iter().filter(|c| key.contains(&c.method)).collect();
    let far = group_aurocs(&separability_spec(0.0, 8.0), &cfgs);
    let far_min: Vec<String> = far
        .iter()
        .map(|(m, g)| {
            let v = g.iter().filter(|(n, _)| n.starts_with("far")).map(|x| x.1).fold(f64::INFINITY, f64::min);
            pass &= v >= 99.5;
            format!("{}={v:.2}", m.id())
        })
        .collect();
    notes.push(format!("far 8: min {}", far_min.join(" ")));

    let order = [Method::Mahalanobis, Method::Rmds, Method::Knn];
    let cfgs: Vec<MethodConfig> = all_methods(d).into_iter().filter(|c| order.contains(&c.method)).collect();
    let mixed = group_aurocs(&separability_spec(1.5, 8.0), &cfgs);
    let ordering: Vec<String> = mixed
        .iter()
        .map(|(m, g)| {
            let (f, n) = (far_mean(g), group_value(g, "near"));
            pass &= f > n;
            format!("{} {f:.2}>{n:.2}", m.id())
        })
        .collect();
    notes.push(format!("far vs near: {}", ordering.join(", ")));

    let took = start.elapsed();
    pass &= took < Duration::from_secs(120);
    notes.push(secs(took));
    Outcome::new(pass, notes.join("; "))
}

// ---------------------------------------------------------------- robustness

fn scale_dump(data: &DumpData, s: f64) -> DumpData {
    let mut out = data.clone();
    let fs = &mut out.features;
    fs.features = Matrix::from_vec(fs.features.rows(), fs.features.cols(), fs.features.as_slice().iter().map(|v| v * s).collect()).unwrap();
    if let Some(l) = fs.logits.take() {
        fs.logits = Some(Matrix::from_vec(l.rows(), l.cols(), l.as_slice().iter().map(|v| v * s).collect()).unwrap());
    }
    if let Some(aug) = out.aug.as_mut() {
        if let Some(o) = aug.odin_logits.take() {
            aug.odin_logits = Some(Matrix::from_vec(o.rows(), o.cols(), o.as_slice().iter().map(|v| v * s).collect()).unwrap());
        }
    }
    out
}

pub fn robustness() -> Outcome {
    let spec = SynthSpec {
        train_per_class: 100,
        val_per_class: 25,
        test_per_class: 50,
        ood_per_dataset: 50,
        datasets_per_group: 1,
        backbones: vec!["synth".into()],
        seeds: vec![0],
        ..Default::default()
    };
    let cell = generate_cell(&spec, 0, 0).unwrap();
    let train = scale_dump(&cell.train, 1e3);
    let val = scale_dump(&cell.val, 1e3);
    let ctx = FitContext {
        train: &train.features,
        val: Some(&val.features),
        head: Some(&cell.head),
        seed: 0,
    };
    let mut bad = Vec::new();
    let mut count = 0;
    for cfg in all_methods(spec.dim) {
        let stats = match fit_all(std::slice::from_ref(&cfg), &ctx) {
            Ok(s) => s,
            Err(e) => {
                bad.push(format!("{} fit: {e}", cfg.method.id()));
                continue;
            }
        };
        for data in std::iter::once(&cell.test).chain(cell.ood.iter().map(|o| &o.2)) {
            let scaled = scale_dump(data, 1e3);
            match score_dump(&cfg, &stats, scaled.inputs(&ctx)) {
                Ok(s) if s.scores.iter().all(|v| v.is_finite()) => count += s.scores.len(),
                Ok(_) => bad.push(format!("{} non-finite", cfg.method.id())),
                Err(e) => bad.push(format!("{}: {e}", cfg.method.id())),
            }
        }
    }

    // fewer samples than dimensions
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, d) = (5, 20);
    let fs = FeatureSet::new(matrix(&gaussian_rows(&mut rng, n, d, 1.0))).with_labels(vec![0, 1, 0, 1, 1]);
    let sigma = (|| -> oodkit::Result<bool> {
        let means = fit_class_means(&fs, 2)?;
        let shared = fit_shared_cov_inv(&fs, &means)?;
        let per_class = fit_class_covariance_invs(&fs, &means)?;
        let (_, bg) = fit_background_gaussian(&fs)?;
        Ok(shared.is_finite() && bg.is_finite() && per_class.iter().all(|m| m.is_finite()))
    })();
    let sigma_ok = matches!(sigma, Ok(true));
    if !sigma_ok {
        bad.push(format!("N=5 < d=20 covariance fit: {sigma:?}"));
    }
    Outcome::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{count} scores finite at x1e3 across 22 methods; shrinkage fits N=5 < d=20")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- protocol

pub fn small_spec() -> SynthSpec {
    SynthSpec {
        classes: 3,
        dim: 8,
        train_per_class: 60,
        val_per_class: 20,
        test_per_class: 40,
        ood_per_dataset: 60,
        datasets_per_group: 1,
        dropout_passes: 4,
        ..Default::default()
    }
}

pub struct ProtocolRun {
    pub csv: String,
    pub failures: usize,
    /// Sweep-phase reads of protected paths.
    pub sweep_protected: Vec<PathBuf>,
    /// Protected paths read at some point outside the sweep, over all cells.
    pub later_reads: usize,
    pub protected: usize,
}

pub fn run_protocol(dir: &Path) -> ProtocolRun {
    let spec = small_spec();
    let manifest = gen_synthetic_benchmark(&spec, dir).unwrap();
    let methods = all_methods(spec.dim);
    let plan = default_sweep_plan(spec.dim);
    let (report, logs) = run_benchmark_instrumented(&manifest, &methods, &plan, RunOptions::default()).unwrap();
    let mut sweep_protected = Vec::new();
    let (mut later_reads, mut protected) = (0, 0);
    for log in &logs {
        protected += log.protected.len();
        for r in &log.records {
            if r.phase == Phase::Sweep && log.protected.contains(&r.path) {
                sweep_protected.push(r.path.clone());
            }
        }
        later_reads += log
            .protected
            .iter()
            .filter(|p| log.records.iter().any(|r| &r.path == *p && r.allowed && r.phase != Phase::Sweep))
            .count();
    }
    ProtocolRun {
        csv: render_csv(&report).unwrap(),
        failures: report.failures.len(),
        sweep_protected,
        later_reads,
        protected,
    }
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = run_protocol(dir.path());
    let b = run_protocol(dir.path());
    let same = a.csv == b.csv;
    let rows = a.csv.lines().count().saturating_sub(1);
    let pass = same
        && a.failures == 0
        && a.sweep_protected.is_empty()
        && b.sweep_protected.is_empty()
        && a.later_reads == a.protected
        && rows > 0;
    Outcome::new(
        pass,
        format!(
            "csv identical: {same} ({rows} rows), failures {}, protected reads during sweep {}, protected paths read outside the sweep {}/{}",
            a.failures,
            a.sweep_protected.len() + b.sweep_protected.len(),
            a.later_reads,
            a.protected
        ),
    )
}

// ---------------------------------------------------------------- report

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

pub const VIM_FAR_ROW: [&str; 11] = [
    "13.82", "10.27", "45.59", "21.08", "97.57", "0.01", "0.05", "0.14", "0.16", "99.97", "DenseNet-201",
];
pub const VIM_NEAR_ROW: [&str; 6] = ["23.08", "14.14", "64.25", "26.46", "96.26", "DenseNet-169"];

/// Cells of the row named `name`, split on the column separators.
pub fn table_row(table: &str, name: &str) -> Option<Vec<String>> {
    let line = table.lines().find(|l| l.split('|').next().map(str::trim) == Some(name))?;
    Some(line.split('|').skip(1).flat_map(|p| p.split_whitespace()).map(String::from).collect())
}

/// Emits the fixture report and compares every file with the checked-in copy.
/// With `OODKIT_BLESS` set, rewrites the copies instead.
pub fn report_golden() -> Outcome {
    let report = fixture::report();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, dir.path()).unwrap();
    let golden = golden_dir();
    let bless = std::env::var_os("OODKIT_BLESS").is_some();
    let mut diffs = Vec::new();
    for p in &written {
        let name = p.file_name().unwrap();
        let ours = std::fs::read(p).unwrap();
        if bless {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(golden.join(name), &ours).unwrap();
        } else if std::fs::read(golden.join(name)).ok().as_deref() != Some(&ours[..]) {
            diffs.push(name.to_string_lossy().into_owned());
        }
    }
    let far = std::fs::read_to_string(dir.path().join("far.txt")).unwrap();
    let near = std::fs::read_to_string(dir.path().join("near.txt")).unwrap();
    let far_ok = table_row(&far, "ViM").is_some_and(|r| r == VIM_FAR_ROW);
    let near_ok = table_row(&near, "ViM").is_some_and(|r| r == VIM_NEAR_ROW);
    let pass = diffs.is_empty() && far_ok && near_ok;
    let mut detail = format!(
        "{} files byte-identical: {}; ViM far row {}; ViM near row {}",
        written.len(),
        diffs.is_empty(),
        if far_ok { VIM_FAR_ROW.join(" ") } else { "MISMATCH".into() },
        if near_ok { "ok" } else { "MISMATCH" },
    );
    if !diffs.is_empty() {
        detail.push_str(&format!("; differing: {}", diffs.join(", ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------- statistics

/// Minimizer of the NLL in `ln T` over a 2000-point grid, refined by a
/// parabola through the best point and its neighbours.
pub fn grid_log_temperature(logits: &Rows, labels: &[usize]) -> f64 {
    let (lo, hi) = (0.01f64.ln(), 100f64.ln());
    let steps = 2000;
    let h = (hi - lo) / (steps - 1) as f64;
    let u = |i: usize| lo + h * i as f64;
    let vals: Vec<f64> = (0..steps).map(|i| oracle::nll(logits, labels, u(i).exp())).collect();
    let best = (0..steps).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    if best == 0 || best == steps - 1 {
        return u(best);
    }
    let (fm, f0, fp) = (vals[best - 1], vals[best], vals[best + 1]);
    let curv = fm - 2.0 * f0 + fp;
    if curv <= 0.0 {
        return u(best);
    }
    u(best) - 0.5 * h * (fp - fm) / curv
}

pub fn temperature_cases() -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    [0.3, 0.7, 1.0, 2.5, 6.0]
        .into_iter()
        .map(|t0| {
            let (n, c) = (800, 6);
            let logits = gaussian_rows(&mut rng, n, c, 3.0);
            let labels: Vec<usize> = logits
                .iter()
                .map(|f| {
                    let p = oracle::softmax(f, t0);
                    let mut u: f64 = rng.random();
                    let mut k = 0;
                    while k + 1 < c && u >= p[k] {
                        u -= p[k];
                        k += 1;
                    }
                    k
                })
                .collect();
            let fit = fit_temperature(&matrix(&logits), &labels).unwrap().ln();
            (t0, fit, grid_log_temperature(&logits, &labels))
        })
        .collect()
}

pub fn weibull_shapes() -> Vec<f64> {
    let dist = rand_distr::Weibull::new(1.0, 2.0).unwrap();
    (0..5u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            let x: Vec<f64> = (0..500).map(|_| rng.sample(dist)).collect();
            fit_weibull(&x).unwrap().unwrap().shape
        })
        .collect()
}

pub fn statistics() -> Outcome {
    let temps = temperature_cases();
    let t_worst = temps.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    let shapes = weibull_shapes();
    let k_worst = shapes.iter().map(|k| (k - 2.0).abs() / 2.0).fold(0.0, f64::max);
    let (rho_worst, trials) = spearman_oracle();
    let pass = t_worst <= 1e-3 && k_worst <= 0.10 && rho_worst <= 1e-12;
    Outcome::new(
        pass,
        format!(
            "max |ln T - grid| = {t_worst:.1e} over {} fits; Weibull k=2 max rel error {:.1}% over {} fits; spearman max dev {rho_worst:.1e} over {trials}",
            temps.len(),
            100.0 * k_worst,
            shapes.len()
        ),
    )
}

// ---------------------------------------------------------------- conformance

pub fn conformance_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/conformance")
}

/// Max deviation from the extractor's reference scores per fixture and method.
pub fn conformance() -> Outcome {
    use oodkit::io::{read_dump, Sidecar};
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["tiny_mlp_t1_eps0014", "tiny_mlp_t1_eps0", "tiny_mlp_t1000_unlabeled"] {
        let path = conformance_dir().join(format!("{name}.oodf"));
        let dump = match read_dump(&path) {
            Ok(d) => d,
            Err(e) => {
                pass = false;
                notes.push(format!("{name}: {e}"));
                continue;
            }
        };
        let side = Sidecar::read(&conformance_dir().join(format!("{name}.meta.json"))).unwrap();
        let aug = dump.aug.as_ref();
        let t = side.meta.odin_temperature.unwrap_or(1.0);
        let stats = FittedStats::default();
        for (id, cfg) in [
            ("msp", MethodConfig::new(Method::Msp)),
            ("odin", MethodConfig::new(Method::Odin).with(Param::Temperature, t).unwrap()),
            ("mcdropout", MethodConfig::new(Method::Mcdropout)),
        ] {
            let got = score_dump(&cfg, &stats, ScoreInputs::new(&dump.features, None).with_aug(aug))
                .map(|s| s.scores);
            match (got, side.reference_scores.get(id)) {
                (Ok(g), Some(r)) => worst = worst.max(max_abs_dev(&g, r)),
                (g, r) => {
                    pass = false;
                    notes.push(format!("{name}/{id}: {:?} ref present {}", g.err(), r.is_some()));
                }
            }
        }
        if side.meta.odin_epsilon == Some(0.0) {
            let same = aug
                .and_then(|a| a.odin_logits.as_ref())
                .zip(dump.features.logits.as_ref())
                .is_some_and(|(o, l)| o == l);
            pass &= same;
            notes.push(format!("eps=0 odin logits equal plain logits: {same}"));
        }
    }
    pass &= worst <= 1e-5;
    notes.insert(0, format!("3 fixtures, max |score - reference| = {worst:.1e}"));
    Outcome::new(pass, notes.join("; "))
}
