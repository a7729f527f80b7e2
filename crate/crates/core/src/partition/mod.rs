//! Geometry of the polyhedral partition induced by the recurrence softmax.
//!
//! All geometry lives in state space with the control input held at zero.

mod simplex;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use simplex::{Feasibility, Polyhedron};

use crate::error::{ensure_dim, Error, Result};
use crate::hybrid::HybridSystemParams;

/// Axis-aligned box `[lower, upper]` in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_dim("bounds", self.lower.len(), self.upper.len())?;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::NonFinite("bounds"));
            }
            if l >= u {
                return Err(Error::Config("bounds need lower < upper in every dimension".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)))
    }

    pub fn widths(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| u - l))
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

/// Symmetric mode adjacency; the diagonal is always set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    size: usize,
    cells: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn identity(size: usize) -> Self {
        let mut cells = vec![false; size * size];
        for i in 0..size {
            cells[i * size + i] = true;
        }
        Self { size, cells }
    }

    pub fn full(size: usize) -> Self {
        Self {
            size,
            cells: vec![true; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.size + j]
    }

    /// Sets `(i, j)` and `(j, i)`. Diagonal entries stay true.
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i == j {
            return;
        }
        self.cells[i * self.size + j] = value;
        self.cells[j * self.size + i] = value;
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).filter(move |&j| self.get(i, j))
    }

    /// Off-diagonal pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in i + 1..self.size {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn check_bounds(params: &HybridSystemParams, bounds: &Bounds) -> Result<()> {
    bounds.validate()?;
    ensure_dim("bounds", params.state_dim(), bounds.dim())
}

/// Feasibility program for a shared boundary between regions `i` and `j`:
/// logits of `i` and `j` tie and weakly dominate every other logit.
pub fn boundary_polyhedron(params: &HybridSystemParams, i: usize, j: usize, bounds: &Bounds) -> Polyhedron {
    let w = &params.recurrence.w_x;
    let r = &params.recurrence.bias;
    let row = |a: usize, b: usize| -> Vec<f64> { (0..w.ncols()).map(|d| w[(a, d)] - w[(b, d)]).collect() };
    let mut poly = Polyhedron::new(bounds.lower.clone(), bounds.upper.clone());
    poly.equalities.push((row(i, j), r[j] - r[i]));
    for k in 0..params.num_modes() {
        if k != i && k != j {
            poly.inequalities.push((row(i, k), r[k] - r[i]));
        }
    }
    poly
}

/// Polyhedron where mode `j` has the (weakly) largest logit.
pub fn region_polyhedron(params: &HybridSystemParams, j: usize, bounds: &Bounds) -> Polyhedron {
    let w = &params.recurrence.w_x;
    let r = &params.recurrence.bias;
    let mut poly = Polyhedron::new(bounds.lower.clone(), bounds.upper.clone());
    for k in 0..params.num_modes() {
        if k != j {
            let coef = (0..w.ncols()).map(|d| w[(j, d)] - w[(k, d)]).collect();
            poly.inequalities.push((coef, r[k] - r[j]));
        }
    }
    poly
}

/// Whether region `j` intersects the bounds box.
pub fn region_nonempty(params: &HybridSystemParams, j: usize, bounds: &Bounds) -> Result<bool> {
    check_bounds(params, bounds)?;
    params.mode(j)?;
    Ok(!matches!(region_polyhedron(params, j, bounds).feasibility(), Feasibility::Infeasible))
}

/// Adjacency of the softmax partition within `bounds`, one LP per pair.
/// Undecided programs are treated as adjacent.
pub fn extract_adjacency(params: &HybridSystemParams, bounds: &Bounds) -> Result<AdjacencyMatrix> {
    check_bounds(params, bounds)?;
    let k = params.num_modes();
    let mut adj = AdjacencyMatrix::identity(k);
    for i in 0..k {
        for j in i + 1..k {
            let adjacent = match boundary_polyhedron(params, i, j, bounds).feasibility() {
                Feasibility::Feasible(_) => true,
                Feasibility::Infeasible => false,
                Feasibility::Undecided => {
                    warn!("adjacency LP for ({i}, {j}) undecided; keeping the transition");
                    true
                }
            };
            adj.set(i, j, adjacent);
        }
    }
    Ok(adj)
}

/// `∇_x σ_j(W_x x + r) = σ_j (e_j − σ)ᵀ W_x` with `u = 0`.
pub fn softmax_input_gradient(params: &HybridSystemParams, j: usize, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let u = DVector::zeros(params.control_dim());
    let probs = params.mode_transition_probs(x, &u)?;
    params.mode(j)?;
    let mut coeff = -probs.clone() * probs[j];
    coeff[j] += probs[j];
    Ok((probs[j], params.recurrence.w_x.tr_mul(&coeff)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlPriorConfig {
    /// Stop once `P(z = j | x, u = 0)` reaches this value.
    pub threshold: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
}

impl Default for ControlPriorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            learning_rate: 0.5,
            max_iters: 10_000,
        }
    }
}

/// A reference point for the sub-goal "go to mode `mode`".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPrior {
    pub mode: usize,
    pub point: Vec<f64>,
    pub attained_probability: f64,
    /// False when the threshold was not reached within the iteration budget.
    pub reached: bool,
    pub iterations: usize,
}

impl ControlPrior {
    pub fn point_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.point)
    }
}

/// Projected gradient ascent on `P(z = j | x, u = 0)` inside `bounds`.
///
/// Steps are taken in box-normalized coordinates and halved until the
/// probability does not decrease, so the iteration is monotone.
pub fn control_prior(
    params: &HybridSystemParams,
    target: usize,
    bounds: &Bounds,
    init: &DVector<f64>,
    config: &ControlPriorConfig,
) -> Result<ControlPrior> {
    check_bounds(params, bounds)?;
    params.mode(target)?;
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::Config("control prior threshold must lie in (0, 1)".into()));
    }
    let scale = bounds.widths().map(|w| w * w);
    let mut x = bounds.clamp(init);
    let (mut prob, mut grad) = softmax_input_gradient(params, target, &x)?;
    let mut iterations = 0;
    while prob < config.threshold && iterations < config.max_iters {
        iterations += 1;
        let direction = grad.component_mul(&scale);
        let mut step = config.learning_rate;
        let mut moved = false;
        for _ in 0..60 {
            let candidate = bounds.clamp(&(&x + &direction * step));
            let (p, g) = softmax_input_gradient(params, target, &candidate)?;
            if p >= prob && candidate != x {
                moved = p > prob || moved;
                x = candidate;
                prob = p;
                grad = g;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(ControlPrior {
        mode: target,
        point: x.iter().copied().collect(),
        attained_probability: prob,
        reached: prob >= config.threshold,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{ModeDynamics, Recurrence};
    use nalgebra::DMatrix;

    pub(crate) fn partition_params(w_x: DMatrix<f64>, bias: Vec<f64>) -> HybridSystemParams {
        let (k, m) = w_x.shape();
        let modes = (0..k)
            .map(|_| {
                ModeDynamics::new(
                    DMatrix::identity(m, m),
                    DMatrix::zeros(m, 1),
                    DVector::zeros(m),
                    DVector::from_element(m, 1.0),
                )
            })
            .collect();
        let rec = Recurrence {
            w_x,
            w_u: DMatrix::zeros(k, 1),
            bias: DVector::from_vec(bias),
        };
        HybridSystemParams::new(modes, rec, DVector::from_element(m, 1e-6)).unwrap()
    }

    fn line() -> Bounds {
        Bounds::new(vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn two_regions_on_a_line_are_adjacent() {
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![0.0, 0.0]);
        let adj = extract_adjacency(&p, &line()).unwrap();
        assert!(adj.get(0, 1) && adj.get(1, 0) && adj.get(0, 0));
        let Feasibility::Feasible(x) = boundary_polyhedron(&p, 0, 1, &line()).feasibility() else {
            panic!()
        };
        assert!(x[0].abs() < 1e-9);
    }

    #[test]
    fn three_cell_chain() {
        let p = partition_params(DMatrix::from_column_slice(3, 1, &[-10.0, 0.0, 10.0]), vec![-10.0, 0.0, -10.0]);
        let bounds = Bounds::new(vec![-3.0], vec![3.0]).unwrap();
        let adj = extract_adjacency(&p, &bounds).unwrap();
        assert!(adj.get(0, 1) && adj.get(1, 2));
        assert!(!adj.get(0, 2) && !adj.get(2, 0));
        assert_eq!(adj.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn boundary_outside_box_is_not_adjacent() {
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![3.0, 0.0]);
        // tie at x = -1.5, outside [-1, 1]
        assert!(!extract_adjacency(&p, &line()).unwrap().get(0, 1));
    }

    #[test]
    fn single_region() {
        let p = partition_params(DMatrix::from_column_slice(1, 1, &[2.0]), vec![0.0]);
        let adj = extract_adjacency(&p, &line()).unwrap();
        assert_eq!(adj.size(), 1);
        assert!(adj.get(0, 0));
    }

    #[test]
    fn control_prior_inverts_two_class_softmax() {
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![0.0, 0.0]);
        let cp = control_prior(&p, 0, &line(), &DVector::from_element(1, 0.0), &ControlPriorConfig::default()).unwrap();
        assert!(cp.reached);
        assert!(cp.attained_probability >= 0.7);
        assert!(cp.point[0] >= (7.0f64 / 3.0).ln() / 2.0 - 1e-12);
        assert_eq!(p.region_of(&cp.point_vector()).unwrap(), 0);
    }

    #[test]
    fn control_prior_flags_unreachable_target() {
        // mode 1 only wins for x > 5, outside the box
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec![0.0, -5.0]);
        let cp = control_prior(&p, 1, &line(), &DVector::from_element(1, 0.0), &ControlPriorConfig::default()).unwrap();
        assert!(!cp.reached);
        assert!(cp.attained_probability < 0.7);
        assert!(!region_nonempty(&p, 1, &line()).unwrap());
        assert!(region_nonempty(&p, 0, &line()).unwrap());
    }

    #[test]
    fn control_prior_keeps_satisfying_init() {
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![0.0, 0.0]);
        let init = DVector::from_element(1, 0.9);
        let cp = control_prior(&p, 0, &line(), &init, &ControlPriorConfig::default()).unwrap();
        assert_eq!(cp.iterations, 0);
        assert_eq!(cp.point, vec![0.9]);
    }

    #[test]
    fn invalid_threshold_and_bounds_are_rejected() {
        let p = partition_params(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![0.0, 0.0]);
        let cfg = ControlPriorConfig {
            threshold: 1.0,
            ..ControlPriorConfig::default()
        };
        assert!(control_prior(&p, 0, &line(), &DVector::zeros(1), &cfg).is_err());
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
    }
}
