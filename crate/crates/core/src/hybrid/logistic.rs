//! Multinomial logistic (softmax) regression by full-batch gradient ascent.
//!
//! Used for the recurrence weights of the switching model. The fitter works
//! in standardized feature coordinates and maps the weights back, which is an
//! exact reparametrization of the same model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// L2 penalty on the (standardized) weights; 0 disables it.
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 500,
            grad_tol: 1e-6,
            l2: 0.0,
        }
    }
}

/// Mean log-likelihood `(1/n) Σ ln softmax(W φ_i + b)[y_i] − (l2/2)‖W‖²`.
pub fn objective(
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    features: &[DVector<f64>],
    targets: &[usize],
    l2: f64,
) -> f64 {
    let n = features.len().max(1) as f64;
    let ll: f64 = features
        .iter()
        .zip(targets)
        .map(|(phi, &y)| math::log_softmax(&(weights * phi + bias))[y])
        .sum();
    ll / n - 0.5 * l2 * weights.norm_squared()
}

/// Analytic gradient of [`objective`] with respect to `(W, b)`.
pub fn gradient(
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    features: &[DVector<f64>],
    targets: &[usize],
    l2: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (k, d) = weights.shape();
    let flat: Vec<f64> = features.iter().flat_map(|f| f.iter().copied()).collect();
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    flat_gradient(&row_major(weights), bias.as_slice(), &flat, d, targets, l2, &mut gw, &mut gb);
    (DMatrix::from_row_slice(k, d, &gw), DVector::from_vec(gb))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

// Same gradient on row-major weights and a row-major feature table.
#[allow(clippy::too_many_arguments)]
fn flat_gradient(
    weights: &[f64],
    bias: &[f64],
    features: &[f64],
    d: usize,
    targets: &[usize],
    l2: f64,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let k = bias.len();
    let n = targets.len().max(1) as f64;
    gw.fill(0.0);
    gb.fill(0.0);
    let mut resid = vec![0.0; k];
    for (phi, &y) in features.chunks_exact(d).zip(targets) {
        let mut max = f64::NEG_INFINITY;
        for (c, r) in resid.iter_mut().enumerate() {
            let row = &weights[c * d..(c + 1) * d];
            *r = bias[c] + row.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>();
            max = max.max(*r);
        }
        let mut total = 0.0;
        for r in resid.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for (c, r) in resid.iter().enumerate() {
            let e = (f64::from(u8::from(c == y)) - r / total) / n;
            gb[c] += e;
            for (g, x) in gw[c * d..(c + 1) * d].iter_mut().zip(phi) {
                *g += e * x;
            }
        }
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g -= l2 * w;
    }
}

/// Fits softmax regression weights, optionally warm-started from `init`.
///
/// Returns `(W, b)` in the original feature coordinates.
pub fn fit_softmax_regression(
    features: &[DVector<f64>],
    targets: &[usize],
    num_classes: usize,
    init: Option<(&DMatrix<f64>, &DVector<f64>)>,
    config: &LogisticConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = features.first().map_or(0, |f| f.len());
    let n = features.len();
    if n == 0 {
        return match init {
            Some((w, b)) => (w.clone(), b.clone()),
            None => (DMatrix::zeros(num_classes, dim), DVector::zeros(num_classes)),
        };
    }

    let mut mean = DVector::zeros(dim);
    for f in features {
        mean += f;
    }
    mean /= n as f64;
    let mut scale = DVector::zeros(dim);
    for f in features {
        scale += (f - &mean).map(|v| v * v);
    }
    let scale = scale.map(|s| {
        let sd = (s / n as f64).sqrt();
        if sd > 1e-12 {
            sd
        } else {
            1.0
        }
    });
    let standardized: Vec<DVector<f64>> = features
        .iter()
        .map(|f| (f - &mean).component_div(&scale))
        .collect();

    // W_s = W diag(σ), b_s = b + W μ
    let (w, b) = match init {
        Some((w0, b0)) => {
            let mut ws = w0.clone();
            for (j, mut col) in ws.column_iter_mut().enumerate() {
                col *= scale[j];
            }
            (ws, b0 + w0 * &mean)
        }
        None => (DMatrix::zeros(num_classes, dim), DVector::zeros(num_classes)),
    };

    let flat: Vec<f64> = standardized.iter().flat_map(|f| f.iter().copied()).collect();
    let mut wf = row_major(&w);
    let mut bf = b.as_slice().to_vec();
    let mut gw = vec![0.0; wf.len()];
    let mut gb = vec![0.0; bf.len()];
    for _ in 0..config.max_iters {
        flat_gradient(&wf, &bf, &flat, dim, targets, config.l2, &mut gw, &mut gb);
        let norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if norm < config.grad_tol {
            break;
        }
        for (w, g) in wf.iter_mut().zip(&gw) {
            *w += config.learning_rate * g;
        }
        for (b, g) in bf.iter_mut().zip(&gb) {
            *b += config.learning_rate * g;
        }
    }
    let w = DMatrix::from_row_slice(num_classes, dim, &wf);
    let b = DVector::from_vec(bf);

    let mut w_raw = w.clone();
    for (j, mut col) in w_raw.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let b_raw = b - &w_raw * &mean;
    (w_raw, b_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..5);
        let d = rng.random_range(1..4);
        let w = DMatrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0));
        let b = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let n = rng.random_range(3..12);
        let feats = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5)))
            .collect();
        let targets = (0..n).map(|_| rng.random_range(0..k)).collect();
        (w, b, feats, targets)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..25 {
            let (w, b, feats, targets) = random_instance(seed);
            let l2 = if seed % 2 == 0 { 0.0 } else { 0.3 };
            let (gw, gb) = gradient(&w, &b, &feats, &targets, l2);
            let h = 1e-6;
            for idx in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[idx] += h;
                wm[idx] -= h;
                let fd = (objective(&wp, &b, &feats, &targets, l2) - objective(&wm, &b, &feats, &targets, l2)) / (2.0 * h);
                assert!((fd - gw[idx]).abs() <= 1e-5 * fd.abs().max(gw[idx].abs()).max(1e-3));
            }
            for idx in 0..b.len() {
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[idx] += h;
                bm[idx] -= h;
                let fd = (objective(&w, &bp, &feats, &targets, l2) - objective(&w, &bm, &feats, &targets, l2)) / (2.0 * h);
                assert!((fd - gb[idx]).abs() <= 1e-5 * fd.abs().max(gb[idx].abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn separates_a_threshold_and_improves_objective() {
        let feats: Vec<_> = (0..200)
            .map(|i| DVector::from_vec(vec![(i as f64 - 100.0) * 0.01]))
            .collect();
        let targets: Vec<_> = feats.iter().map(|f| usize::from(f[0] > 0.0)).collect();
        let (w, b) = fit_softmax_regression(&feats, &targets, 2, None, &LogisticConfig::default());
        let correct = feats
            .iter()
            .zip(&targets)
            .filter(|(f, &y)| math::argmax((&w * *f + &b).as_slice()) == y)
            .count();
        assert!(correct >= 195);
        let zero_obj = objective(&DMatrix::zeros(2, 1), &DVector::zeros(2), &feats, &targets, 0.0);
        assert!(objective(&w, &b, &feats, &targets, 0.0) > zero_obj);
    }
}
