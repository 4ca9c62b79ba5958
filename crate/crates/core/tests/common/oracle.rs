//! Straight-line reference implementations. Nothing here calls into the
//! library's numeric helpers.

use super::Rows;

pub fn affine(w: &Rows, b: &[f64], z: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bc)| {
            let mut s = *bc;
            for j in 0..z.len() {
                s += row[j] * z[j];
            }
            s
        })
        .collect()
}

pub fn lse(v: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in v {
        if x > m {
            m = x;
        }
    }
    let mut s = 0.0;
    for &x in v {
        s += (x - m).exp();
    }
    m + s.ln()
}

pub fn softmax(v: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = v.iter().map(|x| x / t).collect();
    let l = lse(&scaled);
    scaled.iter().map(|x| (x - l).exp()).collect()
}

fn max_of(v: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in v {
        if x > m {
            m = x;
        }
    }
    m
}

pub fn msp(f: &[f64]) -> f64 {
    max_of(&softmax(f, 1.0))
}

pub fn mls(f: &[f64]) -> f64 {
    max_of(f)
}

pub fn energy(f: &[f64], t: f64) -> f64 {
    let s: Vec<f64> = f.iter().map(|x| x / t).collect();
    t * lse(&s)
}

pub fn tempscale(f: &[f64], t: f64) -> f64 {
    max_of(&softmax(f, t))
}

pub fn gen(f: &[f64], gamma: f64, m: usize) -> f64 {
    let mut p = softmax(f, 1.0);
    p.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut s = 0.0;
    for &q in p.iter().take(m.min(p.len())) {
        s += q.powf(gamma) * (1.0 - q).max(0.0).powf(gamma);
    }
    -s
}

pub fn mcdropout(stack: &Rows) -> f64 {
    let c = stack[0].len();
    let mut mean = vec![0.0; c];
    for row in stack {
        for k in 0..c {
            mean[k] += row[k];
        }
    }
    let mut h = 0.0;
    for m in mean.iter_mut() {
        *m /= stack.len() as f64;
        if *m > 0.0 {
            h -= *m * m.ln();
        }
    }
    -h
}

pub fn klmatch(f: &[f64], protos: &Rows) -> f64 {
    let p = softmax(f, 1.0);
    let mut best = f64::INFINITY;
    for d in protos {
        let mut kl = 0.0;
        for k in 0..p.len() {
            if p[k] > 0.0 {
                kl += p[k] * (p[k].ln() - d[k].max(1e-12).ln());
            }
        }
        best = best.min(kl);
    }
    -best
}

pub fn quad(a: &Rows, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * a[i][j] * x[j];
        }
    }
    s
}

fn minus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn mahalanobis(z: &[f64], means: &Rows, prec: &Rows) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for mu in means {
        best = best.max(-quad(prec, &minus(z, mu)));
    }
    best
}

pub fn rmds(z: &[f64], means: &Rows, precs: &[Rows], mu0: &[f64], prec0: &Rows) -> f64 {
    let bg = quad(prec0, &minus(z, mu0));
    let mut best = f64::INFINITY;
    for (mu, p) in means.iter().zip(precs) {
        best = best.min(quad(p, &minus(z, mu)) - bg);
    }
    -best
}

fn normalized(z: &[f64]) -> Vec<f64> {
    let n = l2(z);
    z.iter().map(|x| x / n).collect()
}

/// `points` are already unit rows.
pub fn knn(z: &[f64], points: &Rows, k: usize) -> f64 {
    let q = normalized(z);
    let mut dist: Vec<f64> = points.iter().map(|p| l2(&minus(&q, p))).collect();
    dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
    -dist[k - 1]
}

pub fn relation(z: &[f64], support: &Rows, pow: f64) -> f64 {
    let q = normalized(z);
    let mut s = 0.0;
    for p in support {
        let cos: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / l2(p);
        s += cos.max(0.0).powf(pow);
    }
    s
}

pub fn fdbd(z: &[f64], w: &Rows, b: &[f64], mu: &[f64], distance_norm: bool) -> f64 {
    let f = affine(w, b, z);
    let mut y = 0;
    for k in 1..f.len() {
        if f[k] > f[y] {
            y = k;
        }
    }
    let mut total = 0.0;
    for k in 0..f.len() {
        if k == y {
            continue;
        }
        let dw = minus(&w[y], &w[k]);
        let num: f64 = dw.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b[y] - b[k];
        total += num.abs() / l2(&dw);
    }
    let denom = if distance_norm { l2(&minus(z, mu)) } else { l2(z) };
    total / (f.len() - 1) as f64 / denom
}

/// `‖(I − P Pᵀ)(z − μ)‖₂` with `p` given as `d x D` rows.
pub fn residual_norm(z: &[f64], mu: &[f64], p: &Rows) -> f64 {
    let d = z.len();
    let x = minus(z, mu);
    let dd = p.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            let mut proj = 0.0;
            for k in 0..dd {
                proj += p[i][k] * p[j][k];
            }
            let a = if i == j { 1.0 } else { 0.0 } - proj;
            out[i] += a * x[j];
        }
    }
    l2(&out)
}

pub fn vim(z: &[f64], f: &[f64], mu: &[f64], p: &Rows, alpha: f64) -> f64 {
    -alpha * residual_norm(z, mu, p) + lse(f)
}

pub fn react(z: &[f64], w: &Rows, b: &[f64], clamp: f64, t: f64, use_energy: bool) -> f64 {
    let zc: Vec<f64> = z.iter().map(|x| x.min(clamp)).collect();
    let f = affine(w, b, &zc);
    if use_energy {
        energy(&f, t)
    } else {
        tempscale(&f, t)
    }
}

pub fn ash(z: &[f64], w: &Rows, b: &[f64], pct: f64) -> f64 {
    let d = z.len();
    let pruned = ((d as f64 * pct / 100.0).round() as usize).min(d);
    let keep = d - pruned;
    let mut idx: Vec<usize> = (0..d).collect();
    // stable sort on descending value keeps the lower index first on ties
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap());
    let total: f64 = z.iter().sum();
    let kept: f64 = idx[..keep].iter().map(|&j| z[j]).sum();
    let mut h = vec![0.0; d];
    for &j in &idx[..keep] {
        h[j] = z[j] * total / kept;
    }
    lse(&affine(w, b, &h))
}

pub fn dice(z: &[f64], w: &Rows, b: &[f64], mask: &Rows) -> f64 {
    let masked: Rows = w
        .iter()
        .zip(mask)
        .map(|(r, m)| r.iter().zip(m).map(|(a, c)| a * c).collect())
        .collect();
    lse(&affine(&masked, b, z))
}

pub fn she(z: &[f64], patterns: &Rows, beta: f64) -> f64 {
    let v: Vec<f64> = patterns
        .iter()
        .map(|s| beta * s.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    lse(&v) / beta
}

pub fn gradnorm(z: &[f64], f: &[f64]) -> f64 {
    let p = softmax(f, 1.0);
    let u = 1.0 / p.len() as f64;
    let dist: f64 = p.iter().map(|q| (q - u).abs()).sum();
    dist * l1(z)
}

/// Dense-SVD reference: removes `s₁ u₁ v₁ᵀ` from the batch, then max logit.
pub fn rankfeat(z: &Rows, w: &Rows, b: &[f64]) -> Vec<f64> {
    let (n, d) = (z.len(), z[0].len());
    let m = nalgebra::DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut top = 0;
    for k in 1..svd.singular_values.len() {
        if svd.singular_values[k] > svd.singular_values[top] {
            top = k;
        }
    }
    let s = svd.singular_values[top];
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..d).map(|j| z[i][j] - s * u[(i, top)] * vt[(top, j)]).collect();
            mls(&affine(w, b, &row))
        })
        .collect()
}

pub fn weibull_cdf(x: f64, k: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-(x / lambda).powf(k)).exp()
    }
}

/// Step-by-step OpenMax recalibration; `tails[c] = None` never recalibrates.
pub fn openmax(v: &[f64], mavs: &Rows, tails: &[Option<(f64, f64)>], alpha_top: usize) -> f64 {
    let c = v.len();
    let alpha = alpha_top.min(c);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
    let mut w = vec![1.0; c];
    for rank in 1..=alpha {
        let k = order[rank - 1];
        let r = (alpha - rank + 1) as f64 / alpha as f64;
        let cdf = match tails[k] {
            Some((shape, scale)) => weibull_cdf(l2(&minus(v, &mavs[k])), shape, scale),
            None => 0.0,
        };
        w[k] = 1.0 - r * cdf;
    }
    let mut all = vec![0.0];
    for k in 0..c {
        all[0] += v[k] * (1.0 - w[k]);
        all.push(v[k] * w[k]);
    }
    let p = softmax(&all, 1.0);
    max_of(&p[1..])
}

/// P(pos > neg) + ½ P(pos = neg) over all pairs, in percent.
pub fn auroc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &q in neg {
            if p > q {
                twice += 2;
            } else if p == q {
                twice += 1;
            }
        }
    }
    twice as f64 / (2.0 * pos.len() as f64 * neg.len() as f64) * 100.0
}

/// Scans every observed score as a threshold and keeps the largest one whose
/// positive rate reaches `pct` percent, compared in exact integers.
pub fn fpr_scan(pos: &[f64], neg: &[f64], pct: u64) -> f64 {
    let mut best: Option<f64> = None;
    for &t in pos.iter().chain(neg) {
        let hits = pos.iter().filter(|&&s| s >= t).count() as u64;
        if hits * 100 >= pct * pos.len() as u64 && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum score always qualifies");
    let fp = neg.iter().filter(|&&s| s >= t).count();
    fp as f64 / neg.len() as f64 * 100.0
}

/// 1-based midranks by pairwise counting.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let below = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Mean negative log-likelihood of `softmax(f / T)` at the labels.
pub fn nll(logits: &Rows, labels: &[usize], t: f64) -> f64 {
    let mut s = 0.0;
    for (f, &y) in logits.iter().zip(labels) {
        let scaled: Vec<f64> = f.iter().map(|x| x / t).collect();
        s += lse(&scaled) - scaled[y];
    }
    s / logits.len() as f64
}
