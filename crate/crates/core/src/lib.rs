//! Hybrid hierarchical agent.
//!
//! A recurrent switching linear dynamical system carves the continuous state
//! space into polyhedral regions. A Bayesian MDP plans over those regions with
//! information-gain bonuses and hands each chosen sub-goal to a cached
//! finite-horizon LQR controller.

pub mod agent;
pub mod env;
pub mod harness;
pub mod error;
pub mod hybrid;
pub mod lqr;
pub mod math;
pub mod partition;
pub mod planner;

pub use error::{Error, Result};
