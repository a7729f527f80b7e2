//! Continuous Mountain Car.
//!
//! An underpowered car sits in a valley between two hills and has to build up
//! momentum to reach the flag on the right hill. The dynamics are noiseless;
//! observations are the full `(position, velocity)` state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub position: f64,
    pub velocity: f64,
}

impl EnvState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    pub fn to_vec(self) -> [f64; 2] {
        [self.position, self.velocity]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub position_min: f64,
    pub position_max: f64,
    pub max_speed: f64,
    pub goal_position: f64,
    pub power: f64,
    pub gravity_coeff: f64,
    pub goal_reward: f64,
    pub action_cost_coeff: f64,
    pub max_episode_steps: usize,
    /// Interval the initial position is drawn from on reset.
    pub start_position: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            position_min: -1.2,
            position_max: 0.6,
            max_speed: 0.07,
            goal_position: 0.45,
            power: 0.0015,
            gravity_coeff: 0.0025,
            goal_reward: 100.0,
            action_cost_coeff: 0.1,
            max_episode_steps: 200,
            start_position: (-0.6, -0.4),
        }
    }
}

/// Result of a single environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub reached_goal: bool,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.position_min,
            self.position_max,
            self.max_speed,
            self.goal_position,
            self.power,
            self.gravity_coeff,
            self.goal_reward,
            self.action_cost_coeff,
            self.start_position.0,
            self.start_position.1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("environment constants must be finite".into()));
        }
        if !(self.position_min < self.goal_position && self.goal_position <= self.position_max) {
            return Err(Error::Config(
                "need position_min < goal_position <= position_max".into(),
            ));
        }
        if self.power <= 0.0 || self.max_speed <= 0.0 || self.max_episode_steps == 0 {
            return Err(Error::Config(
                "power, max_speed and max_episode_steps must be positive".into(),
            ));
        }
        let (lo, hi) = self.start_position;
        if lo > hi || lo < self.position_min || hi > self.position_max {
            return Err(Error::Config("start interval must lie inside the track".into()));
        }
        Ok(())
    }

    /// Lower and upper corners of the observable state box.
    pub fn state_bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.position_min, -self.max_speed],
            [self.position_max, self.max_speed],
        )
    }

    /// One step of the dynamics. Pure in `(state, action, self)`; the action is
    /// clipped to `[-1, 1]`.
    pub fn transition(&self, state: EnvState, action: f64) -> Result<Transition> {
        if !action.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        if !state.position.is_finite() || !state.velocity.is_finite() {
            return Err(Error::NonFinite("environment state"));
        }
        let force = action.clamp(-1.0, 1.0);

        let mut velocity = state.velocity + force * self.power
            - self.gravity_coeff * (3.0 * state.position).cos();
        velocity = velocity.clamp(-self.max_speed, self.max_speed);
        let mut position = (state.position + velocity).clamp(self.position_min, self.position_max);
        if position <= self.position_min && velocity < 0.0 {
            position = self.position_min;
            velocity = 0.0;
        }

        let reached_goal = position >= self.goal_position;
        let mut reward = -self.action_cost_coeff * force * force;
        if reached_goal {
            reward += self.goal_reward;
        }
        Ok(Transition {
            state: EnvState { position, velocity },
            reward,
            reached_goal,
        })
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let (lo, hi) = self.start_position;
        let position = if lo == hi {
            lo
        } else {
            ChaCha8Rng::seed_from_u64(seed).random_range(lo..hi)
        };
        EnvState {
            position,
            velocity: 0.0,
        }
    }
}

/// Outcome of [`MountainCar::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// Episodic wrapper that tracks the step budget.
#[derive(Debug, Clone)]
pub struct MountainCar {
    config: EnvConfig,
    state: EnvState,
    elapsed: usize,
}

impl MountainCar {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let state = config.reset(seed);
        Ok(Self {
            config,
            state,
            elapsed: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn reset(&mut self, seed: u64) -> EnvState {
        self.state = self.config.reset(seed);
        self.elapsed = 0;
        self.state
    }

    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        let t = self.config.transition(self.state, action)?;
        self.state = t.state;
        self.elapsed += 1;
        Ok(StepOutcome {
            state: t.state,
            reward: t.reward,
            done: t.reached_goal || self.elapsed >= self.config.max_episode_steps,
            reached_goal: t.reached_goal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valley_step_matches_hand_evaluation() {
        let cfg = EnvConfig::default();
        let t = cfg.transition(EnvState::new(-0.5, 0.0), 0.0).unwrap();
        let v = -0.0025 * (-1.5f64).cos();
        assert!((t.state.velocity - v).abs() < 1e-15);
        assert!((t.state.velocity - (-1.7685e-4)).abs() < 1e-7);
        assert!((t.state.position - (-0.5 + v)).abs() < 1e-15);
        assert!((t.state.position - (-0.50018)).abs() < 1e-5);
        assert_eq!(t.reward, 0.0);
        assert!(!t.reached_goal);
    }

    #[test]
    fn goal_step_pays_goal_reward_and_ends() {
        let cfg = EnvConfig::default();
        let mut car = MountainCar::new(cfg.clone(), 0).unwrap();
        for v in [0.01, 0.05, 0.07] {
            car.state = EnvState::new(cfg.goal_position, v);
            let out = car.step(0.0).unwrap();
            assert_eq!(out.reward, cfg.goal_reward);
            assert!(out.done && out.reached_goal);
        }
    }

    #[test]
    fn left_wall_pins_velocity() {
        let cfg = EnvConfig::default();
        let t = cfg.transition(EnvState::new(-1.2, -0.05), 0.0).unwrap();
        assert_eq!(t.state.position, -1.2);
        assert_eq!(t.state.velocity, 0.0);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let cfg = EnvConfig::default();
        assert!(cfg.transition(EnvState::new(-0.5, 0.0), f64::NAN).is_err());
        assert!(cfg.transition(EnvState::new(f64::INFINITY, 0.0), 0.0).is_err());
    }

    #[test]
    fn reset_is_seeded() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.reset(7), cfg.reset(7));
        for seed in 0..20 {
            let s = cfg.reset(seed);
            assert_eq!(s.velocity, 0.0);
            assert!((-0.6..-0.4).contains(&s.position));
        }
        let pinned = EnvConfig {
            start_position: (-0.5, -0.5),
            ..EnvConfig::default()
        };
        assert_eq!(pinned.reset(3).position, -0.5);
    }

    #[test]
    fn budget_exhaustion_ends_episode_with_nonpositive_reward() {
        let cfg = EnvConfig {
            max_episode_steps: 5,
            ..EnvConfig::default()
        };
        let mut car = MountainCar::new(cfg, 1).unwrap();
        let mut total = 0.0;
        for i in 0..5 {
            let out = car.step(0.5).unwrap();
            total += out.reward;
            assert_eq!(out.done, i == 4);
        }
        assert!((total - (-0.1 * 0.25 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = EnvConfig {
            goal_position: 0.9,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
