use nalgebra::DVector;

use crate::error::{ensure_dim, Error, Result};

/// A logged or simulated rollout.
///
/// Entry `t` holds the state `x_t`, the control `u_t` applied in it, the mode
/// `z_t` governing `x_t -> x_{t+1}` and the reward received for that step.
/// The control (and reward) stored with the final state is never applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub modes: Vec<usize>,
    pub rewards: Vec<f64>,
    pub switch_flags: Vec<bool>,
}

impl Trajectory {
    /// Builds a trajectory with unknown modes (all set to 0) and zero rewards.
    pub fn from_states_controls(states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Result<Self> {
        ensure_dim("trajectory controls", states.len(), controls.len())?;
        let len = states.len();
        Ok(Self {
            states,
            controls,
            modes: vec![0; len],
            rewards: vec![0.0; len],
            switch_flags: vec![false; len],
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of `x_t -> x_{t+1}` transitions.
    pub fn num_transitions(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn set_modes(&mut self, modes: Vec<usize>) {
        self.switch_flags = switch_flags(&modes);
        self.modes = modes;
    }

    pub fn validate(&self, num_modes: usize) -> Result<()> {
        let len = self.len();
        ensure_dim("trajectory controls", len, self.controls.len())?;
        ensure_dim("trajectory modes", len, self.modes.len())?;
        ensure_dim("trajectory rewards", len, self.rewards.len())?;
        ensure_dim("trajectory switch flags", len, self.switch_flags.len())?;
        if let Some(&mode) = self.modes.iter().find(|z| **z >= num_modes) {
            return Err(Error::InvalidMode {
                mode,
                modes: num_modes,
            });
        }
        if self.switch_flags != switch_flags(&self.modes) {
            return Err(Error::Config("switch flags disagree with mode sequence".into()));
        }
        Ok(())
    }

    /// Indices at which a new sojourn begins (always includes 0 when nonempty).
    pub fn sojourn_starts(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&t| t == 0 || self.switch_flags[t])
            .collect()
    }
}

pub fn switch_flags(modes: &[usize]) -> Vec<bool> {
    modes
        .iter()
        .enumerate()
        .map(|(t, z)| t > 0 && *z != modes[t - 1])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_flags_follow_modes() {
        assert_eq!(
            switch_flags(&[0, 0, 1, 1, 0]),
            vec![false, false, true, false, true]
        );
    }

    #[test]
    fn validate_catches_inconsistent_flags() {
        let states = vec![DVector::zeros(1); 3];
        let controls = vec![DVector::zeros(1); 3];
        let mut traj = Trajectory::from_states_controls(states, controls).unwrap();
        traj.set_modes(vec![0, 1, 1]);
        traj.validate(2).unwrap();
        assert_eq!(traj.sojourn_starts(), vec![0, 1]);
        traj.switch_flags[2] = true;
        assert!(traj.validate(2).is_err());
        traj.set_modes(vec![0, 2, 1]);
        assert!(traj.validate(2).is_err());
    }
}
