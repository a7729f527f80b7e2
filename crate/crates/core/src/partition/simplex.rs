//! Dense two-phase simplex, phase one only: decides feasibility of a small
//! polyhedron and returns a witness point.

use log::warn;

/// Outcome of a feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible,
    /// Iteration cap hit; the caller decides how to treat the instance.
    Undecided,
}

/// Polyhedron `{x : E x = e, G x ≥ g, lb ≤ x ≤ ub}`.
#[derive(Debug, Clone, Default)]
pub struct Polyhedron {
    pub equalities: Vec<(Vec<f64>, f64)>,
    pub inequalities: Vec<(Vec<f64>, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

const PIVOT_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 10_000;

enum Row {
    Eq,
    Ge,
    Le,
}

impl Polyhedron {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn feasibility(&self) -> Feasibility {
        let dim = self.dim();
        // shift to y = x - lb >= 0 and normalize each row by its largest coefficient
        let mut rows: Vec<(Vec<f64>, f64, Row)> = Vec::new();
        let mut push = |coef: &[f64], rhs: f64, kind: Row| {
            let shifted = rhs - coef.iter().zip(&self.lower).map(|(a, l)| a * l).sum::<f64>();
            let scale = coef.iter().fold(0.0f64, |s, a| s.max(a.abs()));
            if scale > 0.0 {
                rows.push((coef.iter().map(|a| a / scale).collect(), shifted / scale, kind));
            } else {
                rows.push((coef.to_vec(), shifted, kind));
            }
        };
        for (coef, rhs) in &self.equalities {
            push(coef, *rhs, Row::Eq);
        }
        for (coef, rhs) in &self.inequalities {
            push(coef, *rhs, Row::Ge);
        }
        for d in 0..dim {
            let mut coef = vec![0.0; dim];
            coef[d] = 1.0;
            rows.push((coef, self.upper[d] - self.lower[d], Row::Le));
        }

        let n_rows = rows.len();
        let n_slack = rows.iter().filter(|r| !matches!(r.2, Row::Eq)).count();
        let n_struct = dim + n_slack;
        let width = n_struct + n_rows + 1;
        let mut tab = vec![vec![0.0; width]; n_rows];
        let mut basis = vec![0usize; n_rows];
        let mut slack = dim;
        for (i, (coef, rhs, kind)) in rows.into_iter().enumerate() {
            let row = &mut tab[i];
            row[..dim].copy_from_slice(&coef);
            match kind {
                Row::Eq => {}
                Row::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Row::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
            }
            row[width - 1] = rhs;
            if rhs < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            row[n_struct + i] = 1.0;
            basis[i] = n_struct + i;
        }

        // reduced costs of phase one (minimize the artificial sum)
        let mut cost = vec![0.0; width];
        for row in &tab {
            for j in 0..n_struct {
                cost[j] -= row[j];
            }
            cost[width - 1] -= row[width - 1];
        }

        let mut pivots = 0;
        loop {
            let Some(enter) = (0..n_struct + n_rows).find(|&j| cost[j] < -PIVOT_EPS) else {
                break;
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for (i, row) in tab.iter().enumerate() {
                if row[enter] > PIVOT_EPS {
                    let ratio = row[width - 1] / row[enter];
                    let better = match leave {
                        None => true,
                        Some(l) => ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[l]),
                    };
                    if better {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(leave) = leave else {
                // unbounded direction cannot occur in phase one
                break;
            };
            pivot(&mut tab, &mut cost, leave, enter);
            basis[leave] = enter;
            pivots += 1;
            if pivots >= MAX_PIVOTS {
                warn!("simplex hit the pivot cap on a {dim}-dimensional instance");
                return Feasibility::Undecided;
            }
        }

        let infeasibility = -cost[width - 1];
        if infeasibility > 1e-9 {
            return Feasibility::Infeasible;
        }
        let mut y = vec![0.0; dim];
        for (i, &b) in basis.iter().enumerate() {
            if b < dim {
                y[b] = tab[i][width - 1];
            }
        }
        Feasibility::Feasible(
            y.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .map(|((v, l), u)| (v + l).clamp(*l, *u))
                .collect(),
        )
    }
}

fn pivot(tab: &mut [Vec<f64>], cost: &mut [f64], leave: usize, enter: usize) {
    let p = tab[leave][enter];
    for v in tab[leave].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[leave].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != leave {
            let f = row[enter];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let f = cost[enter];
    for (c, pv) in cost.iter_mut().zip(&pivot_row) {
        *c -= f * pv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_alone_is_feasible() {
        let p = Polyhedron::new(vec![-1.0, 2.0], vec![1.0, 3.0]);
        assert!(matches!(p.feasibility(), Feasibility::Feasible(_)));
    }

    #[test]
    fn equality_inside_box_returns_witness() {
        let mut p = Polyhedron::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        p.equalities.push((vec![1.0, 1.0], 0.5));
        p.inequalities.push((vec![1.0, -1.0], 0.2));
        let Feasibility::Feasible(x) = p.feasibility() else {
            panic!("expected feasible")
        };
        assert!((x[0] + x[1] - 0.5).abs() < 1e-9);
        assert!(x[0] - x[1] >= 0.2 - 1e-9);
    }

    #[test]
    fn equality_outside_box_is_infeasible() {
        let mut p = Polyhedron::new(vec![-1.0], vec![1.0]);
        p.equalities.push((vec![1.0], 1.5));
        assert_eq!(p.feasibility(), Feasibility::Infeasible);
        let mut q = Polyhedron::new(vec![-1.0], vec![1.0]);
        q.inequalities.push((vec![1.0], 0.5));
        q.inequalities.push((vec![-1.0], 0.0));
        assert_eq!(q.feasibility(), Feasibility::Infeasible);
    }

    #[test]
    fn zero_row_with_nonzero_rhs_is_infeasible() {
        let mut p = Polyhedron::new(vec![0.0], vec![1.0]);
        p.equalities.push((vec![0.0], 1.0));
        assert_eq!(p.feasibility(), Feasibility::Infeasible);
    }
}
