//! Shared fixtures for the kernel benchmarks.

use hha_core::env::EnvConfig;
use hha_core::harness;
use hha_core::hybrid::{fit, FitConfig, HybridSystemParams, Trajectory};
use hha_core::partition::Bounds;

pub fn mountain_car_data(steps: usize) -> Vec<Trajectory> {
    harness::random_rollouts(&EnvConfig::default(), steps, 0).expect("rollouts")
}

pub fn mountain_car_bounds() -> Bounds {
    let (lower, upper) = EnvConfig::default().state_bounds();
    Bounds::new(lower.to_vec(), upper.to_vec()).expect("bounds")
}

/// A five-mode model fitted to random-control data.
pub fn fitted_model() -> HybridSystemParams {
    fit(&mountain_car_data(600), 5, &FitConfig::default()).expect("fit").params
}
