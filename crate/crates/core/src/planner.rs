//! Bayesian MDP over discrete modes.
//!
//! Actions are target modes. Transition probabilities carry Dirichlet priors
//! whose support follows the partition adjacency; counts are updated once per
//! completed sojourn. Plans are open-loop action sequences scored by Monte
//! Carlo rollouts of the predictive model: goal-prior log-preference, minus
//! the cached sub-goal cost, plus parameter information gain and the entropy
//! of the predicted next mode. Only the first action of the best sequence is
//! executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::hybrid::sample_categorical;
use crate::math::shannon_entropy;
use crate::partition::AdjacencyMatrix;

/// Pseudo-count given to transitions the partition allows.
pub const ALLOWED_PRIOR_COUNT: f64 = 0.9;
/// Pseudo-count left on transitions the partition rules out.
pub const FORBIDDEN_PRIOR_COUNT: f64 = 1e-6;

/// Dirichlet pseudo-counts `α[a][s][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletTransitionModel {
    size: usize,
    alpha: Vec<f64>,
}

impl DirichletTransitionModel {
    /// Priors shaped by the partition: `0.9` where `s'` is adjacent to `s`
    /// (including `s' = s`), a small floor elsewhere. The same for every action.
    pub fn init_priors(adjacency: &AdjacencyMatrix) -> Self {
        let k = adjacency.size();
        let mut alpha = vec![0.0; k * k * k];
        for a in 0..k {
            for s in 0..k {
                for s_next in 0..k {
                    alpha[(a * k + s) * k + s_next] = if adjacency.get(s, s_next) {
                        ALLOWED_PRIOR_COUNT
                    } else {
                        FORBIDDEN_PRIOR_COUNT
                    };
                }
            }
        }
        Self { size: k, alpha }
    }

    pub fn num_states(&self) -> usize {
        self.size
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (a * self.size + s) * self.size
    }

    pub fn alpha(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.alpha[self.offset(s, a) + s_next]
    }

    /// Concentration vector `α_{as}` over next states.
    pub fn concentration(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.alpha[o..o + self.size]
    }

    pub fn update(&mut self, s: usize, a: usize, s_next: usize) -> Result<()> {
        for idx in [s, a, s_next] {
            if idx >= self.size {
                return Err(Error::InvalidMode {
                    mode: idx,
                    modes: self.size,
                });
            }
        }
        let o = self.offset(s, a);
        self.alpha[o + s_next] += 1.0;
        Ok(())
    }

    /// Predictive mean `α / Σα` of the next mode.
    pub fn predictive(&self, s: usize, a: usize) -> Vec<f64> {
        let alpha = self.concentration(s, a);
        let total: f64 = alpha.iter().sum();
        alpha.iter().map(|v| v / total).collect()
    }

    pub fn raw(&self) -> &[f64] {
        &self.alpha
    }
}

/// `KL(Dir(post) ‖ Dir(prior))` in closed form.
pub fn dirichlet_kl(post: &[f64], prior: &[f64]) -> Result<f64> {
    if post.len() != prior.len() {
        return Err(Error::Dimension {
            context: "Dirichlet KL",
            expected: prior.len(),
            actual: post.len(),
        });
    }
    if post.iter().chain(prior).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveConcentration);
    }
    let post_total: f64 = post.iter().sum();
    let prior_total: f64 = prior.iter().sum();
    let psi_total = digamma(post_total);
    let mut kl = ln_gamma(post_total) - ln_gamma(prior_total);
    for (a, b) in post.iter().zip(prior) {
        if a != b {
            kl += ln_gamma(*b) - ln_gamma(*a) + (a - b) * (digamma(*a) - psi_total);
        }
    }
    Ok(kl)
}

/// Expected parameter information gain of taking `a` in `s`:
/// `Σ_{s'} p̄(s') KL(Dir(α + e_{s'}) ‖ Dir(α))`.
pub fn expected_info_gain(model: &DirichletTransitionModel, s: usize, a: usize) -> f64 {
    let alpha = model.concentration(s, a);
    let total: f64 = alpha.iter().sum();
    let mut post = alpha.to_vec();
    let mut gain = 0.0;
    for s_next in 0..alpha.len() {
        post[s_next] += 1.0;
        gain += alpha[s_next] / total * dirichlet_kl(&post, alpha).unwrap_or(0.0);
        post[s_next] = alpha[s_next];
    }
    gain.max(0.0)
}

/// Shannon entropy (nats) of a predictive distribution.
pub fn state_entropy_bonus(predictive: &[f64]) -> f64 {
    shannon_entropy(predictive)
}

/// Log-preferences `ln p̃(s)` over modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalPrior {
    pub log_preference: Vec<f64>,
}

impl GoalPrior {
    pub fn flat(k: usize) -> Self {
        Self {
            log_preference: vec![0.0; k],
        }
    }

    pub fn prefer(&mut self, mode: usize, value: f64) {
        if let Some(v) = self.log_preference.get_mut(mode) {
            *v = value;
        }
    }

    pub fn preferred_modes(&self) -> Vec<usize> {
        self.log_preference
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Monte Carlo rollouts per candidate sequence.
    pub rollouts: usize,
    /// Enumerate all `K^T` sequences when there are at most this many.
    pub enumeration_cap: usize,
    /// Number of uniformly sampled sequences above the cap.
    pub sampled_sequences: usize,
    pub info_gain_weight: f64,
    pub entropy_weight: f64,
    /// Weight on the cached sub-goal cost `J*_{ij}`.
    pub cost_weight: f64,
    /// Log-preference given to modes where reward was observed.
    pub goal_preference: f64,
    /// Rewards above this mark their mode as a goal.
    pub reward_threshold: f64,
    /// Charged for a rollout step whose action has no cached controller.
    pub infeasible_step_penalty: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            rollouts: 32,
            enumeration_cap: 4096,
            sampled_sequences: 512,
            info_gain_weight: 1.0,
            entropy_weight: 1.0,
            cost_weight: 0.01,
            goal_preference: 5.0,
            reward_threshold: 0.0,
            infeasible_step_penalty: 10.0,
        }
    }
}

/// Mean per-term contributions of the chosen sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub goal: f64,
    pub cost: f64,
    pub info_gain: f64,
    pub entropy: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.goal - self.cost + self.info_gain + self.entropy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanDecision {
    pub action: usize,
    pub sequence: Vec<usize>,
    pub objective: f64,
    pub breakdown: ObjectiveBreakdown,
    pub sequences_evaluated: usize,
}

/// Everything [`plan`] needs about the world besides the Dirichlet model.
pub struct PlanningProblem<'a> {
    pub start: usize,
    pub model: &'a DirichletTransitionModel,
    pub goal_prior: &'a GoalPrior,
    /// `J*_{ij}`; `+∞` marks pairs without a controller.
    pub costs: &'a [Vec<f64>],
    /// Actions excluded as first action (e.g. after a missing-policy veto).
    pub vetoed: &'a [usize],
}

struct StepTerms {
    predictive: Vec<f64>,
    info_gain: f64,
    entropy: f64,
}

/// Receding-horizon choice of the next sub-goal mode.
pub fn plan(problem: &PlanningProblem<'_>, config: &PlannerConfig, seed: u64) -> Result<PlanDecision> {
    let k = problem.model.num_states();
    if problem.start >= k {
        return Err(Error::InvalidMode {
            mode: problem.start,
            modes: k,
        });
    }
    if config.horizon == 0 {
        return Err(Error::Config("planning horizon must be at least 1".into()));
    }
    if problem.goal_prior.log_preference.len() != k || problem.costs.len() != k {
        return Err(Error::Dimension {
            context: "planner inputs",
            expected: k,
            actual: problem.costs.len(),
        });
    }

    let terms: Vec<Vec<StepTerms>> = (0..k)
        .map(|s| {
            (0..k)
                .map(|a| {
                    let predictive = problem.model.predictive(s, a);
                    StepTerms {
                        info_gain: if config.info_gain_weight != 0.0 {
                            expected_info_gain(problem.model, s, a)
                        } else {
                            0.0
                        },
                        entropy: state_entropy_bonus(&predictive),
                        predictive,
                    }
                })
                .collect()
        })
        .collect();

    let total_sequences = (k as u128).checked_pow(config.horizon as u32);
    let enumerate = total_sequences.is_some_and(|n| n <= config.enumeration_cap as u128);
    let count = if enumerate {
        total_sequences.unwrap_or(0) as usize
    } else {
        config.sampled_sequences
    };

    let mut selector = ChaCha8Rng::seed_from_u64(seed);
    selector.set_stream(u64::MAX);
    let mut best: Option<PlanDecision> = None;
    let mut evaluated = 0;
    let mut sequence = vec![0usize; config.horizon];
    for index in 0..count {
        if enumerate {
            let mut code = index;
            for slot in sequence.iter_mut().rev() {
                *slot = code % k;
                code /= k;
            }
        } else {
            use rand::Rng;
            for slot in sequence.iter_mut() {
                *slot = selector.random_range(0..k);
            }
        }
        let first = sequence[0];
        if problem.vetoed.contains(&first) || !problem.costs[problem.start][first].is_finite() {
            continue;
        }
        evaluated += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let breakdown = score_sequence(problem, &terms, &sequence, config, &mut rng);
        let objective = breakdown.total();
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(PlanDecision {
                action: first,
                sequence: sequence.clone(),
                objective,
                breakdown,
                sequences_evaluated: 0,
            });
        }
    }

    Ok(match best {
        Some(mut d) => {
            d.sequences_evaluated = evaluated;
            d
        }
        None => PlanDecision {
            action: problem.start,
            sequence: vec![problem.start; config.horizon],
            objective: f64::NEG_INFINITY,
            breakdown: ObjectiveBreakdown::default(),
            sequences_evaluated: 0,
        },
    })
}

fn score_sequence(
    problem: &PlanningProblem<'_>,
    terms: &[Vec<StepTerms>],
    sequence: &[usize],
    config: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> ObjectiveBreakdown {
    let rollouts = config.rollouts.max(1);
    let mut sum = ObjectiveBreakdown::default();
    for _ in 0..rollouts {
        let mut s = problem.start;
        for &a in sequence {
            let cost = problem.costs[s][a];
            if !cost.is_finite() {
                sum.cost += config.infeasible_step_penalty;
                sum.goal += problem.goal_prior.log_preference[s];
                continue;
            }
            let step = &terms[s][a];
            sum.cost += config.cost_weight * cost;
            sum.info_gain += config.info_gain_weight * step.info_gain;
            sum.entropy += config.entropy_weight * step.entropy;
            s = sample_categorical(&step.predictive, rng);
            sum.goal += problem.goal_prior.log_preference[s];
        }
    }
    let n = rollouts as f64;
    ObjectiveBreakdown {
        goal: sum.goal / n,
        cost: sum.cost / n,
        info_gain: sum.info_gain / n,
        entropy: sum.entropy / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> AdjacencyMatrix {
        let mut adj = AdjacencyMatrix::identity(3);
        adj.set(0, 1, true);
        adj.set(1, 2, true);
        adj
    }

    #[test]
    fn priors_follow_adjacency() {
        let full = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(2));
        assert!(full.raw().iter().all(|v| *v == 0.9));
        let chain = DirichletTransitionModel::init_priors(&chain3());
        for a in 0..3 {
            assert_eq!(chain.alpha(0, a, 2), FORBIDDEN_PRIOR_COUNT);
            assert_eq!(chain.alpha(0, a, 1), 0.9);
        }
        let single = DirichletTransitionModel::init_priors(&AdjacencyMatrix::identity(1));
        assert_eq!(single.raw(), &[0.9]);
    }

    #[test]
    fn update_increments_one_entry() {
        let mut m = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(2));
        m.update(0, 1, 1).unwrap();
        assert!((m.alpha(0, 1, 1) - 1.9).abs() < 1e-15);
        assert_eq!(m.alpha(0, 1, 0), 0.9);
        assert_eq!(m.alpha(1, 1, 1), 0.9);
        m.update(0, 1, 1).unwrap();
        assert!((m.alpha(0, 1, 1) - 2.9).abs() < 1e-15);
        let p = m.predictive(0, 1);
        assert_eq!(p, vec![0.9 / 3.8, 2.9 / 3.8]);
        assert!(m.update(0, 2, 0).is_err());
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(dirichlet_kl(&[0.9, 2.5, 1e-6], &[0.9, 2.5, 1e-6]).unwrap(), 0.0);
        let kl = dirichlet_kl(&[2.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((kl - (2f64.ln() - 0.5)).abs() < 1e-9);
        assert!((kl - 0.1931).abs() < 1e-4);
        assert!(matches!(dirichlet_kl(&[0.0, 1.0], &[1.0, 1.0]), Err(Error::NonPositiveConcentration)));
    }

    #[test]
    fn entropy_hand_values() {
        assert_eq!(state_entropy_bonus(&[0.0, 1.0, 0.0]), 0.0);
        assert!((state_entropy_bonus(&[0.2; 5]) - 5f64.ln()).abs() < 1e-12);
        assert!((state_entropy_bonus(&[0.75, 0.25]) - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn information_gain_prefers_rarely_seen_transitions() {
        let mut m = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(2));
        for _ in 0..100 {
            m.update(0, 0, 0).unwrap();
        }
        // (100.9, 0.9) vs untouched (0.9, 0.9)
        assert!(expected_info_gain(&m, 0, 0) < expected_info_gain(&m, 0, 1));
        assert!(expected_info_gain(&m, 0, 0) >= 0.0);
    }

    fn costs(k: usize, value: f64) -> Vec<Vec<f64>> {
        vec![vec![value; k]; k]
    }

    #[test]
    fn greedy_goal_step() {
        let mut adj = AdjacencyMatrix::identity(3);
        adj.set(0, 2, true);
        let model = DirichletTransitionModel::init_priors(&adj);
        let mut goal = GoalPrior::flat(3);
        goal.prefer(2, 5.0);
        let mut c = costs(3, f64::INFINITY);
        c[0][0] = 1.0;
        c[0][2] = 1.0;
        let config = PlannerConfig {
            horizon: 1,
            info_gain_weight: 0.0,
            entropy_weight: 0.0,
            rollouts: 200,
            ..PlannerConfig::default()
        };
        // commanding 2 reaches 2 only if the model says so; make it certain
        let mut model = model;
        for _ in 0..50 {
            model.update(0, 2, 2).unwrap();
        }
        let problem = PlanningProblem {
            start: 0,
            model: &model,
            goal_prior: &goal,
            costs: &c,
            vetoed: &[],
        };
        assert_eq!(plan(&problem, &config, 1).unwrap().action, 2);
    }

    #[test]
    fn information_gain_picks_unexplored_action() {
        let adj = AdjacencyMatrix::full(2);
        let mut model = DirichletTransitionModel::init_priors(&adj);
        for _ in 0..100 {
            model.update(0, 0, 0).unwrap();
            model.update(0, 0, 1).unwrap();
        }
        let goal = GoalPrior::flat(2);
        let c = costs(2, 1.0);
        let config = PlannerConfig {
            horizon: 1,
            entropy_weight: 0.0,
            ..PlannerConfig::default()
        };
        let problem = PlanningProblem {
            start: 0,
            model: &model,
            goal_prior: &goal,
            costs: &c,
            vetoed: &[],
        };
        let d = plan(&problem, &config, 5).unwrap();
        assert_eq!(d.action, 1);
        assert_eq!(d, plan(&problem, &config, 5).unwrap());
    }

    #[test]
    fn nothing_actionable_stays_put() {
        let model = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(3));
        let goal = GoalPrior::flat(3);
        let c = costs(3, f64::INFINITY);
        let problem = PlanningProblem {
            start: 1,
            model: &model,
            goal_prior: &goal,
            costs: &c,
            vetoed: &[],
        };
        let d = plan(&problem, &PlannerConfig::default(), 0).unwrap();
        assert_eq!(d.action, 1);
        assert_eq!(d.sequences_evaluated, 0);
    }

    #[test]
    fn vetoed_actions_are_skipped() {
        let model = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(2));
        let mut goal = GoalPrior::flat(2);
        goal.prefer(1, 5.0);
        let c = costs(2, 1.0);
        let problem = PlanningProblem {
            start: 0,
            model: &model,
            goal_prior: &goal,
            costs: &c,
            vetoed: &[1],
        };
        assert_eq!(plan(&problem, &PlannerConfig::default(), 0).unwrap().action, 0);
    }

    #[test]
    fn sampled_sequences_above_cap_are_deterministic() {
        let model = DirichletTransitionModel::init_priors(&AdjacencyMatrix::full(4));
        let goal = GoalPrior::flat(4);
        let c = costs(4, 1.0);
        let config = PlannerConfig {
            horizon: 4,
            enumeration_cap: 10,
            sampled_sequences: 40,
            ..PlannerConfig::default()
        };
        let problem = PlanningProblem {
            start: 2,
            model: &model,
            goal_prior: &goal,
            costs: &c,
            vetoed: &[],
        };
        let a = plan(&problem, &config, 77).unwrap();
        assert_eq!(a.sequences_evaluated, 40);
        assert_eq!(a, plan(&problem, &config, 77).unwrap());
    }
}
