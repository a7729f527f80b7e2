//! Hard-EM (coordinate ascent) fitting of the switching model.
//!
//! Each round assigns the single most probable mode sequence to every
//! trajectory by Viterbi decoding, then refits per-mode affine dynamics by
//! ridge regression and the recurrence by softmax regression. A candidate
//! M-step update is only accepted when it does not lower its part of the
//! complete-data log-likelihood, so the objective is monotone across rounds.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::logistic::{fit_softmax_regression, LogisticConfig};
use super::params::{HybridSystemParams, ModeDynamics, Recurrence};
use super::trajectory::Trajectory;
use super::{log_likelihood, transition_log_density};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub ridge: f64,
    pub variance_floor: f64,
    pub max_iters: usize,
    /// Stop once a round improves the log-likelihood by less than this.
    pub tol: f64,
    /// Half-width of the window used for the local regression features that
    /// seed the k-means initialization.
    pub init_window: usize,
    pub emission_var: f64,
    pub logistic: LogisticConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            variance_floor: 1e-8,
            max_iters: 30,
            tol: 1e-6,
            init_window: 5,
            emission_var: super::DEFAULT_EMISSION_VAR,
            logistic: LogisticConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: HybridSystemParams,
    /// Viterbi mode labels for every trajectory of the dataset.
    pub labels: Vec<Vec<usize>>,
    /// Complete-data log-likelihood after initialization and after each round.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub modes_used: usize,
}

impl FitOutcome {
    /// The labelled dataset (modes set to the Viterbi assignment).
    pub fn labelled(&self, dataset: &[Trajectory]) -> Vec<Trajectory> {
        dataset
            .iter()
            .zip(&self.labels)
            .map(|(t, l)| {
                let mut t = t.clone();
                t.set_modes(l.clone());
                t
            })
            .collect()
    }
}

/// Fits a `num_modes`-mode switching model to trajectories with unknown modes.
pub fn fit(dataset: &[Trajectory], num_modes: usize, config: &FitConfig) -> Result<FitOutcome> {
    let first = dataset
        .iter()
        .find(|t| !t.is_empty())
        .ok_or(Error::InsufficientData { modes: num_modes })?;
    if num_modes == 0 {
        return Err(Error::Config("mode count must be at least 1".into()));
    }
    let m = first.states[0].len();
    let n = first.controls[0].len();
    for traj in dataset {
        for (x, u) in traj.states.iter().zip(&traj.controls) {
            if x.len() != m || u.len() != n {
                return Err(Error::Dimension {
                    context: "dataset step",
                    expected: m + n,
                    actual: x.len() + u.len(),
                });
            }
            if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
        }
    }
    let total: usize = dataset.iter().map(Trajectory::num_transitions).sum();
    if total < num_modes * (m + n + 1) {
        return Err(Error::InsufficientData { modes: num_modes });
    }

    let mut labelled: Vec<Trajectory> = dataset.to_vec();
    let init_labels = initial_labels(dataset, num_modes, config);
    for (traj, labels) in labelled.iter_mut().zip(init_labels) {
        traj.set_modes(labels);
    }

    let mut params = initial_params(&labelled, num_modes, m, n, config)?;
    let mut trace = vec![total_log_likelihood(&params, &labelled)?];
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        for traj in labelled.iter_mut() {
            let labels = viterbi(&params, traj);
            traj.set_modes(labels);
        }
        params = m_step(&params, &labelled, config)?;
        let ll = total_log_likelihood(&params, &labelled)?;
        let previous = *trace.last().expect("trace starts nonempty");
        trace.push(ll);
        debug!("hard-EM round {iterations}: log-likelihood {ll:.6}");
        if ll - previous < config.tol {
            break;
        }
    }

    let mut used = vec![false; num_modes];
    for traj in &labelled {
        for &z in &traj.modes {
            used[z] = true;
        }
    }
    let modes_used = used.iter().filter(|u| **u).count();
    if num_modes >= 2 && modes_used < 2 {
        warn!("hard-EM collapsed onto a single mode ({num_modes} requested)");
    }

    Ok(FitOutcome {
        params,
        labels: labelled.into_iter().map(|t| t.modes).collect(),
        log_likelihood_trace: trace,
        iterations,
        modes_used,
    })
}

fn total_log_likelihood(params: &HybridSystemParams, data: &[Trajectory]) -> Result<f64> {
    data.iter().map(|t| log_likelihood(params, t)).sum()
}

/// Design row `[x; u; 1]`.
fn regressor(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut phi = DVector::zeros(x.len() + u.len() + 1);
    phi.rows_mut(0, x.len()).copy_from(x);
    phi.rows_mut(x.len(), u.len()).copy_from(u);
    phi[x.len() + u.len()] = 1.0;
    phi
}

/// Ridge regression of `x_{t+1}` on `[x_t; u_t; 1]` over the given transitions.
///
/// The penalty acts on centred, unit-variance regressors and leaves the
/// intercept free, so it does not depend on the units of the state.
fn regress(
    data: &[Trajectory],
    transitions: &[(usize, usize)],
    m: usize,
    n: usize,
    ridge: f64,
    floor: f64,
) -> Option<ModeDynamics> {
    let d = m + n;
    let count = transitions.len().max(1) as f64;
    let mut mean_in = DVector::zeros(d);
    let mut mean_out = DVector::zeros(m);
    for &(i, t) in transitions {
        mean_in += regressor(&data[i].states[t], &data[i].controls[t]).rows(0, d);
        mean_out += &data[i].states[t + 1];
    }
    mean_in /= count;
    mean_out /= count;
    let mut gram = DMatrix::zeros(d, d);
    let mut cross = DMatrix::zeros(d, m);
    for &(i, t) in transitions {
        let phi = regressor(&data[i].states[t], &data[i].controls[t]).rows(0, d) - &mean_in;
        let y = &data[i].states[t + 1] - &mean_out;
        gram.ger(1.0 / count, &phi, &phi, 1.0);
        cross.ger(1.0 / count, &phi, &y, 1.0);
    }
    let scale = gram.diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let inv = DMatrix::from_diagonal(&scale.map(|s| 1.0 / s));
    let beta_scaled = math::ridge_solve(&(&inv * &gram * &inv), &(&inv * &cross), ridge)?;
    let beta = &inv * beta_scaled;
    let mut coef = DMatrix::zeros(m, d + 1);
    coef.columns_mut(0, d).copy_from(&beta.transpose());
    coef.set_column(d, &(&mean_out - beta.transpose() * &mean_in));
    let a = coef.columns(0, m).into_owned();
    let b = coef.columns(m, n).into_owned();
    let offset = coef.column(m + n).into_owned();
    let mut var = DVector::zeros(m);
    for &(i, t) in transitions {
        let pred = &a * &data[i].states[t] + &b * &data[i].controls[t] + &offset;
        var += (&data[i].states[t + 1] - pred).map(|r| r * r);
    }
    var /= transitions.len().max(1) as f64;
    let dynamics = ModeDynamics::new(a, b, offset, var.map(|v| v.max(floor)));
    let finite = dynamics.a.iter().chain(dynamics.b.iter()).chain(dynamics.offset.iter()).all(|v| v.is_finite());
    finite.then_some(dynamics)
}

fn transitions_by_mode(data: &[Trajectory], k: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); k];
    for (i, traj) in data.iter().enumerate() {
        for t in 0..traj.num_transitions() {
            out[traj.modes[t]].push((i, t));
        }
    }
    out
}

fn recurrence_data(data: &[Trajectory]) -> (Vec<DVector<f64>>, Vec<usize>) {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for traj in data {
        for t in 0..traj.num_transitions() {
            features.push(traj.states[t].iter().chain(traj.controls[t].iter()).copied().collect::<Vec<_>>().into());
            targets.push(traj.modes[t + 1]);
        }
    }
    (features, targets)
}

fn split_weights(w: &DMatrix<f64>, m: usize, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (w.columns(0, m).into_owned(), w.columns(m, n).into_owned())
}

fn joined_weights(rec: &Recurrence) -> DMatrix<f64> {
    let (k, m) = rec.w_x.shape();
    let n = rec.w_u.ncols();
    let mut w = DMatrix::zeros(k, m + n);
    w.columns_mut(0, m).copy_from(&rec.w_x);
    w.columns_mut(m, n).copy_from(&rec.w_u);
    w
}

fn initial_params(
    data: &[Trajectory],
    k: usize,
    m: usize,
    n: usize,
    config: &FitConfig,
) -> Result<HybridSystemParams> {
    let all: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.num_transitions()).map(move |s| (i, s)))
        .collect();
    let global = regress(data, &all, m, n, config.ridge, config.variance_floor)
        .ok_or(Error::NonFinite("global regression"))?;
    let by_mode = transitions_by_mode(data, k);
    let modes = by_mode
        .iter()
        .map(|tr| {
            if tr.len() >= m + n + 1 {
                regress(data, tr, m, n, config.ridge, config.variance_floor).unwrap_or_else(|| global.clone())
            } else {
                global.clone()
            }
        })
        .collect();
    let (features, targets) = recurrence_data(data);
    let (w, bias) = fit_softmax_regression(&features, &targets, k, None, &config.logistic);
    let (w_x, w_u) = split_weights(&w, m, n);
    HybridSystemParams::new(
        modes,
        Recurrence { w_x, w_u, bias },
        DVector::from_element(m, config.emission_var),
    )
}

fn mode_gaussian_ll(params: &HybridSystemParams, data: &[Trajectory], tr: &[(usize, usize)], z: usize) -> f64 {
    tr.iter().map(|&(i, t)| transition_log_density(params, &data[i], t, z)).sum()
}

fn recurrence_ll(rec: &Recurrence, features: &[DVector<f64>], targets: &[usize]) -> f64 {
    let w = joined_weights(rec);
    super::logistic::objective(&w, &rec.bias, features, targets, 0.0) * features.len() as f64
}

/// Generalized M-step: per-mode candidates replace the current values only
/// when they do not decrease the corresponding likelihood terms.
fn m_step(current: &HybridSystemParams, data: &[Trajectory], config: &FitConfig) -> Result<HybridSystemParams> {
    let (k, m, n) = (current.num_modes(), current.state_dim(), current.control_dim());
    let mut next = current.clone();
    for (z, tr) in transitions_by_mode(data, k).iter().enumerate() {
        if tr.len() < m + n + 1 {
            continue;
        }
        let Some(candidate) = regress(data, tr, m, n, config.ridge, config.variance_floor) else {
            continue;
        };
        let before = mode_gaussian_ll(current, data, tr, z);
        let mut trial = next.clone();
        trial.modes[z] = candidate;
        if mode_gaussian_ll(&trial, data, tr, z) >= before {
            next = trial;
        }
    }

    let (features, targets) = recurrence_data(data);
    let init_w = joined_weights(&current.recurrence);
    let (w, bias) = fit_softmax_regression(&features, &targets, k, Some((&init_w, &current.recurrence.bias)), &config.logistic);
    let (w_x, w_u) = split_weights(&w, m, n);
    let candidate = Recurrence { w_x, w_u, bias };
    let finite = candidate.w_x.iter().chain(candidate.w_u.iter()).chain(candidate.bias.iter()).all(|v| v.is_finite());
    if finite && recurrence_ll(&candidate, &features, &targets) >= recurrence_ll(&current.recurrence, &features, &targets) {
        next.recurrence = candidate;
    }
    Ok(next)
}

/// Most probable mode sequence for one trajectory under `params`.
///
/// Maximizes `Σ_t ln N(x_{t+1} | mode z_t) + ln P(z_{t+1} | x_t, u_t)`, which is
/// exactly the complete-data log-likelihood with the modes left free.
pub(crate) fn viterbi(params: &HybridSystemParams, traj: &Trajectory) -> Vec<usize> {
    let k = params.num_modes();
    let len = traj.len();
    if len == 0 {
        return Vec::new();
    }
    if len == 1 || k == 1 {
        let z0 = params.region_of(&traj.states[0]).unwrap_or(0);
        return vec![if k == 1 { 0 } else { z0 }; len];
    }
    let mut score = vec![0.0; k];
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(len - 1);
    let mut next = vec![0.0; k];
    for t in 0..len - 1 {
        let log_trans = math::log_softmax(&params.recurrence.logits(&traj.states[t], &traj.controls[t]));
        let emit: Vec<f64> = (0..k).map(|z| score[z] + transition_log_density(params, traj, t, z)).collect();
        let mut ptr = vec![0usize; k];
        for (z_next, slot) in next.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (z, e) in emit.iter().enumerate() {
                // general pairwise form; the recurrence itself ignores z
                let v = e + log_trans[z_next];
                if v > best_val {
                    best_val = v;
                    best = z;
                }
            }
            *slot = best_val;
            ptr[z_next] = best;
        }
        back.push(ptr);
        std::mem::swap(&mut score, &mut next);
    }
    let mut labels = vec![0usize; len];
    labels[len - 1] = math::argmax(&score);
    for t in (0..len - 1).rev() {
        labels[t] = back[t][labels[t + 1]];
    }
    labels
}

/// Per-transition clustering features: the state plus the coefficients of a
/// local affine regression over a window around the transition.
fn initial_labels(dataset: &[Trajectory], k: usize, config: &FitConfig) -> Vec<Vec<usize>> {
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut owner: Vec<(usize, usize)> = Vec::new();
    for (i, traj) in dataset.iter().enumerate() {
        let steps = traj.num_transitions();
        for t in 0..steps {
            let lo = t.saturating_sub(config.init_window);
            let hi = (t + config.init_window + 1).min(steps);
            let mut feat: Vec<f64> = traj.states[t].iter().copied().collect();
            feat.extend(local_coefficients(traj, lo, hi));
            points.push(feat);
            owner.push((i, t));
        }
    }
    standardize(&mut points);
    let clusters = kmeans(&points, k, config.seed, 100);

    let mut labels: Vec<Vec<usize>> = dataset.iter().map(|t| vec![0; t.len()]).collect();
    for (&(i, t), &c) in owner.iter().zip(&clusters) {
        labels[i][t] = c;
    }
    for (traj, l) in dataset.iter().zip(labels.iter_mut()) {
        if traj.len() >= 2 {
            let last = traj.len() - 1;
            l[last] = l[last - 1];
        }
    }
    labels
}

fn local_coefficients(traj: &Trajectory, lo: usize, hi: usize) -> Vec<f64> {
    let m = traj.states[0].len();
    let d = m + traj.controls[0].len() + 1;
    let mut gram = DMatrix::zeros(d, d);
    let mut cross = DMatrix::zeros(d, m);
    for t in lo..hi {
        let phi = regressor(&traj.states[t], &traj.controls[t]);
        gram.ger(1.0, &phi, &phi, 1.0);
        cross.ger(1.0, &phi, &traj.states[t + 1], 1.0);
    }
    let ridge = 1e-6 * gram.trace() / d as f64 + 1e-12;
    math::ridge_solve(&gram, &cross, ridge)
        .map(|c| c.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect())
        .unwrap_or_else(|| vec![0.0; d * m])
}

/// Z-scores each column, clipping at ±3 so local regression outliers don't
/// dominate the clustering.
fn standardize(points: &mut [Vec<f64>]) {
    let Some(dim) = points.first().map(Vec::len) else {
        return;
    };
    let n = points.len() as f64;
    for j in 0..dim {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for p in points.iter_mut() {
            p[j] = ((p[j] - mean) / sd).clamp(-3.0, 3.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{simulate, HybridSystemParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_mode_truth() -> HybridSystemParams {
        HybridSystemParams::new(
            vec![ModeDynamics::new(
                DMatrix::from_row_slice(2, 2, &[0.95, 0.1, -0.1, 0.9]),
                DMatrix::from_row_slice(2, 1, &[0.0, 0.2]),
                DVector::from_vec(vec![0.05, -0.02]),
                DVector::from_element(2, 1e-3),
            )],
            Recurrence::zeros(1, 2, 1),
            DVector::from_element(2, 1e-6),
        )
        .unwrap()
    }

    fn random_controls(len: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| DVector::from_element(1, rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn recovers_single_linear_system() {
        let truth = one_mode_truth();
        let traj = simulate(&truth, &DVector::from_vec(vec![0.5, -0.5]), &random_controls(2000, 1), 2).unwrap();
        let out = fit(&[traj], 1, &FitConfig::default()).unwrap();
        let err = (&out.params.modes[0].a - &truth.modes[0].a).amax();
        assert!(err < 0.05, "max-abs A error {err}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(fit(&[], 2, &FitConfig::default()), Err(Error::InsufficientData { .. })));
        let t = Trajectory::default();
        assert!(fit(&[t], 2, &FitConfig::default()).is_err());
    }

    #[test]
    fn viterbi_is_optimal_on_short_sequences() {
        // exhaustive check over all K^L label sequences
        let mut truth = one_mode_truth();
        let mut second = truth.modes[0].clone();
        second.a[(0, 0)] = 0.5;
        second.offset[1] = 0.3;
        truth.modes.push(second);
        truth.recurrence = Recurrence {
            w_x: DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -2.0, 1.0]),
            w_u: DMatrix::from_row_slice(2, 1, &[0.5, -0.5]),
            bias: DVector::from_vec(vec![0.1, -0.1]),
        };
        truth.validate().unwrap();
        let mut traj = simulate(&truth, &DVector::from_vec(vec![0.2, 0.1]), &random_controls(5, 4), 5).unwrap();
        let labels = viterbi(&truth, &traj);
        traj.set_modes(labels);
        let best = log_likelihood(&truth, &traj).unwrap();
        for code in 0..(1usize << traj.len()) {
            let modes: Vec<usize> = (0..traj.len()).map(|b| (code >> b) & 1).collect();
            let mut alt = traj.clone();
            alt.set_modes(modes);
            assert!(log_likelihood(&truth, &alt).unwrap() <= best + 1e-9);
        }
    }
}
