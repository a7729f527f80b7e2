//! Finite-horizon LQR for the mode-to-mode sub-problems.
//!
//! Each sub-problem drives the noiseless affine dynamics of one mode towards
//! a fixed goal point, penalizing only the terminal deviation and the control
//! effort:
//!
//! ```text
//! J = (x_S − g)ᵀ Q_f (x_S − g) + Σ_{t<S} u_tᵀ R u_t
//! ```
//!
//! The affine offset and the goal are absorbed by augmenting the state with a
//! constant 1, which keeps the recursion exact.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::hybrid::{HybridSystemParams, ModeDynamics};
use crate::math::symmetrize;
use crate::partition::{AdjacencyMatrix, ControlPrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    pub horizon: usize,
    /// `Q_f = terminal_weight · I`
    pub terminal_weight: f64,
    /// `R = control_weight · I`
    pub control_weight: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            terminal_weight: 100.0,
            control_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub goal: DVector<f64>,
    pub terminal_cost: DMatrix<f64>,
    pub control_cost: DMatrix<f64>,
    pub horizon: usize,
}

impl LqrProblem {
    pub fn for_mode(mode: &ModeDynamics, goal: DVector<f64>, config: &LqrConfig) -> Self {
        let m = mode.a.nrows();
        let n = mode.b.ncols();
        Self {
            a: mode.a.clone(),
            b: mode.b.clone(),
            offset: mode.offset.clone(),
            goal,
            terminal_cost: DMatrix::identity(m, m) * config.terminal_weight,
            control_cost: DMatrix::identity(n, n) * config.control_weight,
            horizon: config.horizon,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = (self.state_dim(), self.control_dim());
        ensure_dim("LQR A cols", m, self.a.ncols())?;
        ensure_dim("LQR B rows", m, self.b.nrows())?;
        ensure_dim("LQR offset", m, self.offset.len())?;
        ensure_dim("LQR goal", m, self.goal.len())?;
        ensure_dim("LQR Q_f", m, self.terminal_cost.nrows())?;
        ensure_dim("LQR Q_f", m, self.terminal_cost.ncols())?;
        ensure_dim("LQR R", n, self.control_cost.nrows())?;
        ensure_dim("LQR R", n, self.control_cost.ncols())?;
        if self.horizon == 0 {
            return Err(Error::Config("LQR horizon must be at least 1".into()));
        }
        let values = self
            .a
            .iter()
            .chain(self.b.iter())
            .chain(self.offset.iter())
            .chain(self.goal.iter())
            .chain(self.terminal_cost.iter())
            .chain(self.control_cost.iter());
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LQR problem"));
        }
        Ok(())
    }

    fn augmented(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (m, n) = (self.state_dim(), self.control_dim());
        let mut a = DMatrix::zeros(m + 1, m + 1);
        a.view_mut((0, 0), (m, m)).copy_from(&self.a);
        a.view_mut((0, m), (m, 1)).copy_from(&self.offset);
        a[(m, m)] = 1.0;
        let mut b = DMatrix::zeros(m + 1, n);
        b.view_mut((0, 0), (m, n)).copy_from(&self.b);
        (a, b)
    }

    /// Terminal cost written as a quadratic form in `[x; 1]`.
    fn augmented_terminal(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        let qg = &self.terminal_cost * &self.goal;
        let mut p = DMatrix::zeros(m + 1, m + 1);
        p.view_mut((0, 0), (m, m)).copy_from(&self.terminal_cost);
        p.view_mut((0, m), (m, 1)).copy_from(&(-&qg));
        p.view_mut((m, 0), (1, m)).copy_from(&(-qg.transpose()));
        p[(m, m)] = self.goal.dot(&qg);
        p
    }
}

/// Time-indexed affine feedback `u_t = −K_t x − k_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrPolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    /// Augmented cost-to-go matrices `P_0 … P_S`.
    pub cost_to_go: Vec<DMatrix<f64>>,
}

impl LqrPolicy {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Control at step `t`; steps past the horizon reuse the last gain.
    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let t = t.min(self.horizon() - 1);
        -(&self.gains[t] * x) - &self.offsets[t]
    }

    /// Optimal cost-to-go from `x0` at `t = 0`.
    pub fn expected_cost(&self, x0: &DVector<f64>) -> f64 {
        let m = x0.len();
        let mut z = DVector::zeros(m + 1);
        z.rows_mut(0, m).copy_from(x0);
        z[m] = 1.0;
        z.dot(&(&self.cost_to_go[0] * &z))
    }
}

/// Backward Riccati recursion on the augmented system.
pub fn solve(problem: &LqrProblem) -> Result<LqrPolicy> {
    problem.validate()?;
    let m = problem.state_dim();
    let (a, b) = problem.augmented();
    let r = &problem.control_cost;

    let mut p = problem.augmented_terminal();
    let mut cost_to_go = vec![p.clone()];
    let mut gains = Vec::with_capacity(problem.horizon);
    let mut offsets = Vec::with_capacity(problem.horizon);
    for step in (0..problem.horizon).rev() {
        let pb = &p * &b;
        let g = symmetrize(&(r + b.transpose() * &pb));
        let rhs = pb.transpose() * &a;
        let k = g
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::SingularControlCost { step })?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularControlCost { step });
        }
        // P ← Aᵀ P A − Aᵀ P B K
        p = symmetrize(&(a.transpose() * &p * &a - a.transpose() * &pb * &k));
        gains.push(k.columns(0, m).into_owned());
        offsets.push(k.column(m).into_owned());
        cost_to_go.push(p.clone());
    }
    gains.reverse();
    offsets.reverse();
    cost_to_go.reverse();
    Ok(LqrPolicy {
        gains,
        offsets,
        cost_to_go,
    })
}

/// Realized objective of the noiseless closed loop started at `x0`.
pub fn rollout_cost(policy: &LqrPolicy, problem: &LqrProblem, x0: &DVector<f64>) -> f64 {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for t in 0..problem.horizon {
        let u = policy.control(t, &x);
        cost += u.dot(&(&problem.control_cost * &u));
        x = &problem.a * &x + &problem.b * &u + &problem.offset;
    }
    let dev = x - &problem.goal;
    cost + dev.dot(&(&problem.terminal_cost * &dev))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub policy: LqrPolicy,
    /// `J*_{ij}`: cost of the sub-problem from a representative entry state.
    pub cost: f64,
    pub goal: DVector<f64>,
}

/// Cached sub-problem solutions keyed by `(from mode, to mode)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTable {
    pub entries: BTreeMap<(usize, usize), PolicyEntry>,
}

impl PolicyTable {
    pub fn get(&self, from: usize, to: usize) -> Option<&PolicyEntry> {
        self.entries.get(&(from, to))
    }

    /// `J*_{ij}`, or `+∞` for pairs without a policy.
    pub fn cost(&self, from: usize, to: usize) -> f64 {
        self.get(from, to).map_or(f64::INFINITY, |e| e.cost)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dense `K × K` matrix of sub-goal costs.
    pub fn cost_matrix(&self, k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| self.cost(i, j)).collect()).collect()
    }
}

/// Solves every adjacency-permitted `(i, j)` sub-problem with mode-`i`
/// dynamics and goal `x_j`. `entry_states[i]` is the representative start
/// state for `J*_{ij}`; it falls back to the control prior of `i`.
pub fn cache_policies(
    params: &HybridSystemParams,
    adjacency: &AdjacencyMatrix,
    priors: &[Option<ControlPrior>],
    entry_states: &[Option<DVector<f64>>],
    config: &LqrConfig,
) -> Result<PolicyTable> {
    let k = params.num_modes();
    ensure_dim("adjacency", k, adjacency.size())?;
    ensure_dim("control priors", k, priors.len())?;
    ensure_dim("entry states", k, entry_states.len())?;
    let mut table = PolicyTable::default();
    for i in 0..k {
        let start = entry_states[i]
            .clone()
            .or_else(|| priors[i].as_ref().filter(|p| p.reached).map(ControlPrior::point_vector));
        for j in adjacency.neighbours(i) {
            let Some(prior) = priors[j].as_ref().filter(|p| p.reached) else {
                warn!("no control prior for mode {j}; pair ({i}, {j}) is not actionable");
                continue;
            };
            let Some(start) = start.as_ref() else {
                warn!("no representative state for mode {i}; pair ({i}, {j}) omitted");
                continue;
            };
            let problem = LqrProblem::for_mode(&params.modes[i], prior.point_vector(), config);
            let policy = match solve(&problem) {
                Ok(p) => p,
                Err(e) => {
                    warn!("LQR for ({i}, {j}) failed: {e}");
                    continue;
                }
            };
            let cost = rollout_cost(&policy, &problem, start);
            table.entries.insert(
                (i, j),
                PolicyEntry {
                    policy,
                    cost,
                    goal: problem.goal.clone(),
                },
            );
        }
    }
    Ok(table)
}

// Serialized form: one record per cached pair, matrices row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRecord {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub goal: Vec<f64>,
    pub state_dim: usize,
    pub control_dim: usize,
    pub gains: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub cost_to_go: Vec<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl PolicyTable {
    pub fn to_records(&self) -> Vec<PolicyRecord> {
        self.entries
            .iter()
            .map(|(&(from, to), e)| PolicyRecord {
                from,
                to,
                cost: e.cost,
                goal: e.goal.as_slice().to_vec(),
                state_dim: e.goal.len(),
                control_dim: e.policy.gains.first().map_or(0, |g| g.nrows()),
                gains: e.policy.gains.iter().map(row_major).collect(),
                offsets: e.policy.offsets.iter().map(|o| o.as_slice().to_vec()).collect(),
                cost_to_go: e.policy.cost_to_go.iter().map(row_major).collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[PolicyRecord]) -> Result<Self> {
        let mut table = PolicyTable::default();
        for r in records {
            let (m, n) = (r.state_dim, r.control_dim);
            let gains = r
                .gains
                .iter()
                .map(|g| {
                    ensure_dim("policy gain", n * m, g.len())?;
                    Ok(DMatrix::from_row_slice(n, m, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let cost_to_go = r
                .cost_to_go
                .iter()
                .map(|p| {
                    ensure_dim("cost-to-go", (m + 1) * (m + 1), p.len())?;
                    Ok(DMatrix::from_row_slice(m + 1, m + 1, p))
                })
                .collect::<Result<Vec<_>>>()?;
            ensure_dim("policy offsets", gains.len(), r.offsets.len())?;
            ensure_dim("cost-to-go schedule", gains.len() + 1, cost_to_go.len())?;
            if gains.is_empty() {
                return Err(Error::Config("policy with empty horizon".into()));
            }
            table.entries.insert(
                (r.from, r.to),
                PolicyEntry {
                    policy: LqrPolicy {
                        gains,
                        offsets: r.offsets.iter().map(|o| DVector::from_column_slice(o)).collect(),
                        cost_to_go,
                    },
                    cost: r.cost,
                    goal: DVector::from_column_slice(&r.goal),
                },
            );
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, offset: f64, goal: f64, q: f64, r: f64, horizon: usize) -> LqrProblem {
        LqrProblem {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            offset: DVector::from_element(1, offset),
            goal: DVector::from_element(1, goal),
            terminal_cost: DMatrix::from_element(1, 1, q),
            control_cost: DMatrix::from_element(1, 1, r),
            horizon,
        }
    }

    #[test]
    fn one_step_scalar_closed_form() {
        let (q, r, x0, g) = (3.0, 2.0, -0.4, 1.1);
        let problem = scalar(1.0, 1.0, 0.0, g, q, r, 1);
        let policy = solve(&problem).unwrap();
        let x = DVector::from_element(1, x0);
        let u0 = policy.control(0, &x)[0];
        assert!((u0 - q * (g - x0) / (q + r)).abs() < 1e-12);
        let expected = q * r * (g - x0).powi(2) / (q + r);
        assert!((rollout_cost(&policy, &problem, &x) - expected).abs() < 1e-12);
        assert!((policy.expected_cost(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn at_goal_with_fixed_point_dynamics_costs_nothing() {
        let m = 2;
        let goal = DVector::from_vec(vec![0.3, -0.2]);
        let problem = LqrProblem {
            a: DMatrix::identity(m, m),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            offset: DVector::zeros(m),
            goal: goal.clone(),
            terminal_cost: DMatrix::identity(m, m) * 10.0,
            control_cost: DMatrix::identity(1, 1),
            horizon: 7,
        };
        let policy = solve(&problem).unwrap();
        for t in 0..7 {
            assert!(policy.control(t, &goal).amax() < 1e-12);
        }
        assert!(rollout_cost(&policy, &problem, &goal).abs() < 1e-12);
    }

    #[test]
    fn heavier_control_cost_shrinks_first_control() {
        let mut last = f64::INFINITY;
        for scale in [1e-2, 1.0, 1e2, 1e4, 1e6] {
            let problem = scalar(1.0, 1.0, 0.0, 1.0, 1.0, scale, 1);
            let u = solve(&problem).unwrap().control(0, &DVector::zeros(1))[0].abs();
            assert!(u < last);
            last = u;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn singular_control_cost_is_reported() {
        let problem = scalar(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 3);
        assert!(matches!(solve(&problem), Err(Error::SingularControlCost { step: 2 })));
    }

    #[test]
    fn cost_to_go_matches_rollout_with_offset() {
        let problem = LqrProblem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.02, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0015, 0.0015]),
            offset: DVector::from_vec(vec![0.001, -0.002]),
            goal: DVector::from_vec(vec![0.4, 0.0]),
            terminal_cost: DMatrix::identity(2, 2) * 100.0,
            control_cost: DMatrix::identity(1, 1),
            horizon: 50,
        };
        let policy = solve(&problem).unwrap();
        let x0 = DVector::from_vec(vec![-0.5, 0.01]);
        let a = rollout_cost(&policy, &problem, &x0);
        let b = policy.expected_cost(&x0);
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        assert!(a >= 0.0);
    }
}
