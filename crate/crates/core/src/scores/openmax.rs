use crate::data::softmax_unchecked;
use crate::fit::OpenMaxModel;
use crate::linalg::{norm2, sub};

/// Recalibrated activations `(v̂_unknown, v̂_1..v̂_C)` for activation vector `v`.
///
/// The top `α` classes by activation (ties to the lower index) are damped by
/// `w_c = 1 − r_c · CDF_c(‖v − MAV_c‖)` with `r_c = (α − rank + 1)/α`; the
/// removed mass becomes the unknown-class activation.
pub fn openmax_recalibrate(v: &[f64], model: &OpenMaxModel) -> (f64, Vec<f64>) {
    let c = v.len();
    let alpha = model.alpha_top.min(c);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut weights = vec![1.0; c];
    for (rank0, &k) in order.iter().take(alpha).enumerate() {
        let r = (alpha - rank0) as f64 / alpha as f64;
        let cdf = match &model.tails[k] {
            Some(tail) => tail.cdf(norm2(&sub(v, model.mavs.row(k)))),
            None => 0.0,
        };
        weights[k] = 1.0 - r * cdf;
    }
    let recal: Vec<f64> = v.iter().zip(&weights).map(|(a, w)| a * w).collect();
    let unknown = v.iter().zip(&weights).map(|(a, w)| a * (1.0 - w)).sum();
    (unknown, recal)
}

/// Largest recalibrated known-class probability.
pub fn openmax(v: &[f64], model: &OpenMaxModel) -> f64 {
    let (unknown, recal) = openmax_recalibrate(v, model);
    let mut all = Vec::with_capacity(recal.len() + 1);
    all.push(unknown);
    all.extend_from_slice(&recal);
    let p = softmax_unchecked(&all, 1.0);
    p[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
