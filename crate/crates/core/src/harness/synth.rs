//! Seeded synthetic benchmarks.
//!
//! ID data is a C-class Gaussian mixture with unit isotropic noise and class
//! means of equal norm in random directions. The head is `W_c = unit(μ_c)`,
//! `b = 0`. Each OoD dataset moves every class mean by `shift` along its own
//! unit direction: mostly random and orthogonal to the span of the class
//! means, plus a share pointing away from the other classes, so a shift never
//! lands on another class; `far_general` can additionally use heavy-tailed
//! noise. Dropout stacks come from T feature-dropout passes through the head,
//! ODIN logits from a sign-gradient step on the features.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{softmax_unchecked, AugmentedDump, DropoutStack, DumpMeta, FeatureSet, LinearHead};
use crate::error::{OodError, Result};
use crate::harness::derive_seed;
use crate::harness::sweep::{DumpData, Grid, SweepPlan};
use crate::io::manifest::{Manifest, RunSpec, MANIFEST_VERSION};
use crate::io::{write_dump, write_head};
use crate::linalg::{argmax, Matrix};
use crate::scores::{Method, Param, ParamValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    /// Norm of every class mean, in noise standard deviations.
    pub radius: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub ood_per_dataset: usize,
    /// Mean shift of the `near` group.
    pub near_shift: f64,
    /// Mean shift of the `far_bp` and `far_general` groups.
    pub far_shift: f64,
    pub datasets_per_group: usize,
    /// Weight of the in-span component of each shift direction, which points
    /// away from the other class means; the rest is orthogonal to all means.
    pub away_share: f64,
    /// Student-t (3 dof, unit variance) noise for `far_general`.
    pub heavy_tail_general: bool,
    pub backbones: Vec<String>,
    pub seeds: Vec<u64>,
    /// Include dropout stacks and ODIN logits.
    pub augment: bool,
    pub dropout_passes: usize,
    pub dropout_rate: f64,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            radius: 8.0,
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 250,
            ood_per_dataset: 500,
            near_shift: 1.5,
            far_shift: 8.0,
            datasets_per_group: 2,
            away_share: 0.5,
            heavy_tail_general: true,
            backbones: vec!["synth-a".into(), "synth-b".into()],
            seeds: vec![0, 1],
            augment: true,
            dropout_passes: 8,
            dropout_rate: 0.1,
            odin_temperature: 1.0,
            odin_epsilon: 0.0014,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OodError::InvalidArgument(m.into()));
        if self.classes < 2 || self.dim < 2 {
            return bad("need at least 2 classes and 2 dimensions");
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return bad("every ID split needs samples");
        }
        if self.ood_per_dataset < 2 || self.datasets_per_group == 0 {
            return bad("every OoD dataset needs at least 2 samples");
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !(self.near_shift >= 0.0 && self.far_shift >= 0.0) {
            return bad("shifts must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.away_share) {
            return bad("away share must lie in [0, 1]");
        }
        if self.backbones.is_empty() || self.seeds.is_empty() {
            return bad("need at least one backbone and one seed");
        }
        if self.augment && (self.dropout_passes == 0 || !(0.0..1.0).contains(&self.dropout_rate)) {
            return bad("dropout needs T >= 1 and a rate in [0, 1)");
        }
        if !(self.odin_temperature > 0.0 && self.odin_epsilon >= 0.0) {
            return bad("ODIN needs T > 0 and epsilon >= 0");
        }
        Ok(())
    }

    /// Class-mean norm for the i-th backbone; later backbones are better separated.
    fn radius_for(&self, backbone: usize) -> f64 {
        self.radius * (1.0 + 0.15 * backbone as f64)
    }
}

/// One generated (backbone, seed) cell, held in memory.
#[derive(Debug, Clone)]
pub struct SynthCell {
    pub head: LinearHead,
    pub class_means: Matrix,
    pub train: DumpData,
    pub val: DumpData,
    pub test: DumpData,
    /// (group, dataset name, data), groups in name order.
    pub ood: Vec<(String, String, DumpData)>,
}

impl SynthCell {
    pub fn group(&self, name: &str) -> Vec<&DumpData> {
        self.ood.iter().filter(|(g, _, _)| g == name).map(|(_, _, d)| d).collect()
    }
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit vector with the components along `basis` removed. Falls back to
/// an unconstrained direction when the basis spans the whole space.
fn off_span_unit(rng: &mut ChaCha8Rng, basis: &Matrix) -> Vec<f64> {
    let d = basis.cols();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for r in 0..basis.rows() {
        let mut v = basis.row(r).to_vec();
        for q in &ortho {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            ortho.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    if ortho.len() >= d {
        return unit_vector(rng, d);
    }
    loop {
        let mut v = unit_vector(rng, d);
        for q in &ortho {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Copy)]
enum Noise {
    Gaussian,
    HeavyTail,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    head: LinearHead,
    means: Matrix,
}

impl Generator<'_> {
    fn noise(&mut self, kind: Noise) -> f64 {
        match kind {
            Noise::Gaussian => self.rng.sample(StandardNormal),
            Noise::HeavyTail => {
                let t = StudentT::new(3.0).expect("3 degrees of freedom").sample(&mut self.rng);
                t / 3f64.sqrt()
            }
        }
    }

    /// Rows `centers[i] + noise`, rounded to f32.
    fn features(&mut self, centers: &[Vec<f64>], kind: Noise) -> Matrix {
        let d = self.spec.dim;
        let mut data = Vec::with_capacity(centers.len() * d);
        for c in centers {
            for &m in c {
                let v = m + self.noise(kind);
                data.push(f32_round(v));
            }
        }
        Matrix::from_vec(centers.len(), d, data).expect("consistent shape")
    }

    fn logits(&self, z: &Matrix) -> Matrix {
        let mut l = self.head.logits(z).expect("head matches features");
        let rounded: Vec<f64> = l.as_slice().iter().map(|&v| f32_round(v)).collect();
        l = Matrix::from_vec(l.rows(), l.cols(), rounded).expect("same shape");
        l
    }

    fn augment(&mut self, z: &Matrix) -> AugmentedDump {
        let s = self.spec;
        let c = self.head.num_classes();
        let keep = 1.0 - s.dropout_rate;
        let mut probs = Vec::with_capacity(z.rows() * s.dropout_passes * c);
        for row in z.iter_rows() {
            for _ in 0..s.dropout_passes {
                let masked: Vec<f64> = row
                    .iter()
                    .map(|&v| if self.rng.random::<f64>() < keep { v / keep } else { 0.0 })
                    .collect();
                let p = softmax_unchecked(&self.head.apply(&masked), 1.0);
                probs.extend(p.into_iter().map(f32_round));
            }
        }
        let t = s.odin_temperature;
        let mut odin = Vec::with_capacity(z.rows() * c);
        for row in z.iter_rows() {
            let logits = self.head.apply(row);
            let p = softmax_unchecked(&logits, t);
            let y = argmax(&logits);
            // d/dz log p_y(Wz/T) = (W_y - sum_c p_c W_c) / T
            let mut grad: Vec<f64> = self.head.weights.row(y).to_vec();
            for (pc, w) in p.iter().zip(self.head.weights.iter_rows()) {
                for (g, wi) in grad.iter_mut().zip(w) {
                    *g -= pc * wi;
                }
            }
            let moved: Vec<f64> = row
                .iter()
                .zip(&grad)
                .map(|(&v, &g)| {
                    let sign = if g > 0.0 {
                        1.0
                    } else if g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    v + s.odin_epsilon * sign
                })
                .collect();
            odin.extend(self.head.apply(&moved).into_iter().map(f32_round));
        }
        AugmentedDump {
            dropout_probs: Some(
                DropoutStack::new(z.rows(), s.dropout_passes, c, probs).expect("consistent stack"),
            ),
            odin_logits: Some(Matrix::from_vec(z.rows(), c, odin).expect("consistent shape")),
            meta: DumpMeta {
                checkpoint: Some("synthetic".into()),
                dropout_passes: Some(s.dropout_passes),
                odin_temperature: Some(t),
                odin_epsilon: Some(s.odin_epsilon),
            },
        }
    }

    fn id_split(&mut self, per_class: usize, with_aug: bool) -> DumpData {
        let c = self.spec.classes;
        let mut centers = Vec::with_capacity(per_class * c);
        let mut labels = Vec::with_capacity(per_class * c);
        for k in 0..c {
            for _ in 0..per_class {
                centers.push(self.means.row(k).to_vec());
                labels.push(k);
            }
        }
        let z = self.features(&centers, Noise::Gaussian);
        let logits = self.logits(&z);
        let aug = (with_aug && self.spec.augment).then(|| self.augment(&z));
        DumpData::new(FeatureSet::new(z).with_labels(labels).with_logits(logits), aug)
    }

    /// Unit direction in the span of the class means, orthogonal to mean `k`
    /// and pointing away from the other means.
    fn away_from_others(&self, k: usize) -> Vec<f64> {
        let d = self.spec.dim;
        let mk = self.means.row(k);
        let mk2: f64 = mk.iter().map(|x| x * x).sum();
        let mut v = vec![0.0; d];
        for j in (0..self.means.rows()).filter(|&j| j != k) {
            v.iter_mut().zip(self.means.row(j)).for_each(|(a, b)| *a -= b);
        }
        let p: f64 = v.iter().zip(mk).map(|(a, b)| a * b).sum::<f64>() / mk2;
        v.iter_mut().zip(mk).for_each(|(a, b)| *a -= p * b);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }

    fn ood_split(&mut self, shift: f64, kind: Noise) -> DumpData {
        let c = self.spec.classes;
        let a = self.spec.away_share;
        let dirs: Vec<Vec<f64>> = (0..c)
            .map(|k| {
                let orth = off_span_unit(&mut self.rng, &self.means);
                let away = self.away_from_others(k);
                orth.iter()
                    .zip(&away)
                    .map(|(o, w)| a * w + (1.0 - a * a).sqrt() * o)
                    .collect()
            })
            .collect();
        let centers: Vec<Vec<f64>> = (0..self.spec.ood_per_dataset)
            .map(|i| {
                let k = i % c;
                self.means
                    .row(k)
                    .iter()
                    .zip(&dirs[k])
                    .map(|(m, u)| m + shift * u)
                    .collect()
            })
            .collect();
        let z = self.features(&centers, kind);
        let logits = self.logits(&z);
        let aug = self.spec.augment.then(|| self.augment(&z));
        DumpData::new(FeatureSet::new(z).with_logits(logits), aug)
    }
}

/// Generates one cell without touching the disk.
pub fn generate_cell(spec: &SynthSpec, backbone: usize, seed: u64) -> Result<SynthCell> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&format!(
        "synth/{}/{backbone}/{seed}",
        spec.seed
    )));
    let (c, d) = (spec.classes, spec.dim);
    let r = spec.radius_for(backbone);
    let dirs: Vec<Vec<f64>> = (0..c).map(|_| unit_vector(&mut rng, d)).collect();
    let means = Matrix::from_rows(
        &dirs.iter().map(|u| u.iter().map(|x| r * x).collect::<Vec<_>>()).collect::<Vec<_>>(),
        d,
    )?;
    let weights: Vec<f64> = dirs.concat().into_iter().map(f32_round).collect();
    let head = LinearHead::new(Matrix::from_vec(c, d, weights)?, vec![0.0; c])?;
    let mut g = Generator {
        spec,
        rng,
        head: head.clone(),
        means: means.clone(),
    };
    let train = g.id_split(spec.train_per_class, false);
    let val = g.id_split(spec.val_per_class, true);
    let test = g.id_split(spec.test_per_class, true);
    let mut ood = Vec::new();
    let groups = [
        ("far_bp", spec.far_shift, Noise::Gaussian),
        (
            "far_general",
            spec.far_shift,
            if spec.heavy_tail_general {
                Noise::HeavyTail
            } else {
                Noise::Gaussian
            },
        ),
        ("near", spec.near_shift, Noise::Gaussian),
    ];
    for (group, shift, kind) in groups {
        for i in 0..spec.datasets_per_group {
            ood.push((group.to_string(), format!("{group}_{i}"), g.ood_split(shift, kind)));
        }
    }
    Ok(SynthCell {
        head,
        class_means: means,
        train,
        val,
        test,
        ood,
    })
}

fn numbers(v: &[f64]) -> Vec<ParamValue> {
    v.iter().map(|&x| ParamValue::Number(x)).collect()
}

/// Grids for a feature dimension `d`. Subspace sizes are fractions of `d`.
pub fn default_sweep_plan(d: usize) -> SweepPlan {
    let mut plan = BTreeMap::new();
    let mut grid = |m: Method, entries: Vec<(Param, Vec<ParamValue>)>| {
        plan.insert(m, entries.into_iter().collect::<Grid>());
    };
    let percentiles = numbers(&[65.0, 80.0, 95.0, 99.0]);
    grid(Method::Ash, vec![(Param::Percentile, percentiles.clone())]);
    grid(Method::React, vec![(Param::Percentile, percentiles)]);
    grid(
        Method::Fdbd,
        vec![(
            Param::DistanceAsNormalizer,
            vec![ParamValue::Flag(true), ParamValue::Flag(false)],
        )],
    );
    grid(
        Method::Gen,
        vec![
            (Param::Gamma, numbers(&[0.01, 0.1, 0.5])),
            (Param::TopM, numbers(&[10.0, 50.0, 100.0])),
        ],
    );
    grid(Method::Knn, vec![(Param::K, numbers(&[50.0]))]);
    grid(Method::Relation, vec![(Param::Pow, numbers(&[8.0]))]);
    let dims: Vec<f64> = [d / 4, d / 2, 3 * d / 4]
        .into_iter()
        .filter(|&k| k >= 1)
        .map(|k| k as f64)
        .collect();
    grid(Method::Vim, vec![(Param::Dim, numbers(&dims))]);
    grid(Method::Residual, vec![(Param::Dim, numbers(&dims))]);
    grid(Method::Odin, vec![(Param::Temperature, numbers(&[1.0]))]);
    SweepPlan(plan)
}

/// Writes every cell's dumps, `manifest.json` and `sweeps.json` under `out`.
pub fn gen_synthetic_benchmark(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for (b, backbone) in spec.backbones.iter().enumerate() {
        for &seed in &spec.seeds {
            let cell = generate_cell(spec, b, seed)?;
            let rel = PathBuf::from(backbone).join(format!("seed-{seed}"));
            let dir = out.join(&rel);
            std::fs::create_dir_all(&dir)?;
            let put = |name: &str, data: &DumpData| -> Result<PathBuf> {
                write_dump(&data.features, data.aug.as_ref(), &dir.join(name))?;
                Ok(rel.join(name))
            };
            write_head(&cell.head, &dir.join("head.oodh"))?;
            let mut ood_groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
            for (group, name, data) in &cell.ood {
                let p = put(&format!("{name}.oodf"), data)?;
                ood_groups.entry(group.clone()).or_default().push(p);
            }
            runs.push(RunSpec {
                backbone: backbone.clone(),
                seed,
                id_train: put("train.oodf", &cell.train)?,
                id_val: put("val.oodf", &cell.val)?,
                id_test: put("test.oodf", &cell.test)?,
                head: rel.join("head.oodh"),
                ood_groups,
            });
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        backbones: spec.backbones.clone(),
        seeds: spec.seeds.clone(),
        runs,
        class_names: Some((0..spec.classes).map(|k| format!("class-{k}")).collect()),
        base_dir: out.to_path_buf(),
    };
    crate::io::write_manifest(&manifest, &out.join("manifest.json"))?;
    let plan = default_sweep_plan(spec.dim);
    let mut s = serde_json::to_string_pretty(&plan)?;
    s.push('\n');
    std::fs::write(out.join("sweeps.json"), s)?;
    Ok(manifest)
}
