//! Recurrent-only switching linear dynamical system.
//!
//! Discrete modes follow `P(z_{t+1} | x_t, u_t) = softmax(W_x x_t + W_u u_t + r)`
//! and each mode owns affine-Gaussian dynamics
//! `x_{t+1} = A_z x_t + B_z u_t + b_z + ν_t`. Observations are the state
//! itself, so emissions only contribute a constant to any likelihood and are
//! not modelled beyond their variance.

mod fit;
mod kmeans;
pub mod logistic;
mod params;
mod trajectory;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use fit::{fit, FitConfig, FitOutcome};
pub use params::{HybridSystemParams, ModeDynamics, Recurrence, DEFAULT_EMISSION_VAR};
pub use trajectory::{switch_flags, Trajectory};

use crate::error::{Error, Result};
use crate::math;
use params::add_noise;

/// How [`simulate_with`] draws noise and modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub process_noise: bool,
    /// Sample `z_{t+1}` from the recurrence; otherwise take its argmax.
    pub sample_modes: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            process_noise: true,
            sample_modes: true,
        }
    }
}

impl SimulationOptions {
    pub fn deterministic() -> Self {
        Self {
            process_noise: false,
            sample_modes: false,
        }
    }
}

/// Rolls the generative model forward with sampled modes and process noise.
pub fn simulate(
    params: &HybridSystemParams,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    seed: u64,
) -> Result<Trajectory> {
    simulate_with(params, x0, controls, seed, SimulationOptions::default())
}

pub fn simulate_with(
    params: &HybridSystemParams,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    seed: u64,
    options: SimulationOptions,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero_u = DVector::zeros(params.control_dim());
    let draw_mode = |probs: DVector<f64>, rng: &mut ChaCha8Rng| -> usize {
        if options.sample_modes {
            sample_categorical(probs.as_slice(), rng)
        } else {
            math::argmax(probs.as_slice())
        }
    };

    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut modes = Vec::with_capacity(controls.len() + 1);
    let mut x = x0.clone();
    let mut z = draw_mode(params.mode_transition_probs(&x, &zero_u)?, &mut rng);
    for u in controls {
        let probs = params.mode_transition_probs(&x, u)?;
        let mean = params.step_dynamics(&x, u, z, None)?;
        let next = if options.process_noise {
            add_noise(mean, &params.modes[z].noise_var, &mut rng)
        } else {
            mean
        };
        states.push(std::mem::replace(&mut x, next));
        modes.push(z);
        z = draw_mode(probs, &mut rng);
    }
    states.push(x);
    modes.push(z);

    let mut all_controls = controls.to_vec();
    all_controls.push(zero_u);
    let mut traj = Trajectory::from_states_controls(states, all_controls)?;
    traj.set_modes(modes);
    Ok(traj)
}

pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Log-density of transition `t` of `traj` under mode `z` (Gaussian term only).
pub(crate) fn transition_log_density(
    params: &HybridSystemParams,
    traj: &Trajectory,
    t: usize,
    z: usize,
) -> f64 {
    let mode = &params.modes[z];
    let residual = &traj.states[t + 1] - mode.predict(&traj.states[t], &traj.controls[t]);
    math::diag_gaussian_log_density(&residual, &mode.noise_var)
}

/// Complete-data log-likelihood of a trajectory whose modes are known:
/// Gaussian dynamics terms plus categorical mode-transition terms.
pub fn log_likelihood(params: &HybridSystemParams, traj: &Trajectory) -> Result<f64> {
    params.validate()?;
    traj.validate(params.num_modes())?;
    let mut total = 0.0;
    for t in 0..traj.num_transitions() {
        let x = &traj.states[t];
        let u = &traj.controls[t];
        if x.len() != params.state_dim() || u.len() != params.control_dim() {
            return Err(Error::Dimension {
                context: "trajectory step",
                expected: params.state_dim(),
                actual: x.len(),
            });
        }
        total += transition_log_density(params, traj, t, traj.modes[t]);
        let log_probs = math::log_softmax(&params.recurrence.logits(x, u));
        total += log_probs[traj.modes[t + 1]];
    }
    Ok(total)
}
