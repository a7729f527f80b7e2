//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut out = logits.map(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &DVector<f64>) -> DVector<f64> {
    let lse = log_sum_exp(logits.as_slice());
    logits.map(|v| v - lse)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-density of a Gaussian with diagonal covariance.
pub fn diag_gaussian_log_density(
    residual: &DVector<f64>,
    variances: &DVector<f64>,
) -> f64 {
    residual
        .iter()
        .zip(variances.iter())
        .map(|(r, v)| -0.5 * (LN_2PI + v.ln()) - r * r / (2.0 * v))
        .sum()
}

/// Solves `(XᵀX + λI) β = XᵀY` for every column of `Y`.
///
/// `gram` and `cross` are the accumulated `XᵀX` and `XᵀY`.
pub(crate) fn ridge_solve(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    ridge: f64,
) -> Option<DMatrix<f64>> {
    let n = gram.nrows();
    solve_regularized(gram + DMatrix::identity(n, n) * ridge, cross)
}

fn solve_regularized(regularized: DMatrix<f64>, cross: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    regularized
        .clone()
        .cholesky()
        .map(|c| c.solve(cross))
        .or_else(|| regularized.lu().solve(cross))
}

/// Symmetric part of a square matrix.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| -v * v.ln())
        .sum()
}
