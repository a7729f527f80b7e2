//! The hierarchical agent: a fitted switching model, its partition and
//! control priors, cached LQR controllers between adjacent modes, and the
//! Dirichlet planner that picks which mode to head for next.
//!
//! The planner runs only when the observed mode changes or the current
//! sub-goal has been pursued for `max_dwell_time` steps. Every completed
//! sojourn adds one `(mode, commanded mode, next mode)` count. The model is
//! refitted on the whole replay buffer every `refit_interval` steps until an
//! episode earns `reward_refit_threshold`.

use log::{debug, info, warn};
use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{fit, FitConfig, HybridSystemParams, Trajectory};
use crate::lqr::{cache_policies, solve, LqrConfig, LqrProblem, PolicyRecord, PolicyTable};
use crate::partition::{
    control_prior, extract_adjacency, region_polyhedron, AdjacencyMatrix, Bounds, ControlPrior, ControlPriorConfig,
    Feasibility,
};
use crate::planner::{plan, DirichletTransitionModel, GoalPrior, ObjectiveBreakdown, PlannerConfig, PlanningProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Number of modes of the fitted model.
    pub num_modes: usize,
    pub refit_interval: usize,
    /// Refitting stops once a single episode has earned this much reward.
    pub reward_refit_threshold: f64,
    pub max_dwell_time: usize,
    /// Random-control steps before the first fit; defaults to `refit_interval`.
    pub burn_in_steps: Option<usize>,
    pub control_limit: f64,
    /// Continuous goal, lifted to its mode after every fit.
    pub goal_point: Option<Vec<f64>>,
    pub control_prior: ControlPriorConfig,
    pub prior_start: PriorStart,
}

/// Where the ascent for each control prior starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorStart {
    /// Centroid of the states the fit assigned to the mode.
    Centroid,
    /// Vertex of the region returned by the feasibility program.
    Vertex,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            num_modes: 5,
            refit_interval: 1000,
            reward_refit_threshold: 90.0,
            max_dwell_time: 25,
            burn_in_steps: None,
            control_limit: 1.0,
            goal_point: Some(vec![0.45, 0.0]),
            control_prior: ControlPriorConfig::default(),
            prior_start: PriorStart::Vertex,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::Config("num_modes must be at least 1".into()));
        }
        if self.refit_interval == 0 || self.max_dwell_time == 0 {
            return Err(Error::Config("refit_interval and max_dwell_time must be at least 1".into()));
        }
        if !(self.control_limit > 0.0) {
            return Err(Error::Config("control_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in_steps.unwrap_or(self.refit_interval)
    }
}

/// Everything needed to build an [`Agent`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSetup {
    pub agent: AgentConfig,
    pub planner: PlannerConfig,
    pub lqr: LqrConfig,
    pub fit: FitConfig,
    /// Box used for the partition analysis and the control priors.
    pub bounds: Bounds,
}

/// Fitted model and everything derived from it. Replaced wholesale on refit.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub params: HybridSystemParams,
    pub adjacency: AdjacencyMatrix,
    pub control_priors: Vec<Option<ControlPrior>>,
    pub policies: PolicyTable,
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub step: usize,
    pub state: Vec<f64>,
    pub control: f64,
    pub mode: Option<usize>,
    pub replanned: bool,
    pub action: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanReason {
    /// First decision under a (new) model or in a new episode.
    Start,
    ModeSwitch,
    DwellExpired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub step: usize,
    pub reason: ReplanReason,
    pub state: Vec<f64>,
    pub mode: usize,
    pub action: usize,
    pub objective: f64,
    pub breakdown: ObjectiveBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitEvent {
    pub step: usize,
    pub succeeded: bool,
    pub message: String,
}

/// Serialized model after a refit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub step: usize,
    pub params: HybridSystemParams,
    pub adjacency: AdjacencyMatrix,
    pub control_priors: Vec<Option<ControlPrior>>,
    pub policies: Vec<PolicyRecord>,
    pub dirichlet: DirichletTransitionModel,
    pub goal_prior: GoalPrior,
}

// A completed sojourn, kept in continuous terms so it can be relabelled
// under a refitted model.
#[derive(Debug, Clone, PartialEq)]
struct Sojourn {
    start: Vec<f64>,
    start_control: f64,
    target: Vec<f64>,
    end: Vec<f64>,
    end_control: f64,
}

#[derive(Debug, Clone)]
struct Command {
    action: usize,
    target: Vec<f64>,
    start: Vec<f64>,
    start_control: f64,
    elapsed: usize,
}

#[derive(Debug, Clone, Default)]
struct Episode {
    states: Vec<Vec<f64>>,
    controls: Vec<f64>,
    rewards: Vec<f64>,
}

pub struct Agent {
    setup: AgentSetup,
    rng: ChaCha8Rng,
    model: Option<ModelState>,
    dirichlet: Option<DirichletTransitionModel>,
    goal_prior: Option<GoalPrior>,
    goal_modes: Vec<usize>,
    current_mode: Option<usize>,
    command: Option<Command>,
    vetoed: Vec<usize>,
    last_control: f64,
    pending: Option<(Vec<f64>, f64, bool)>,
    step: usize,
    buffer: Vec<Trajectory>,
    episode: Episode,
    episode_reward: f64,
    best_episode_reward: f64,
    sojourns: Vec<Sojourn>,
    rewarding_states: Vec<Vec<f64>>,
    refits: u64,
    events: Vec<StepEvent>,
    plans: Vec<PlanEvent>,
    refit_events: Vec<RefitEvent>,
    snapshots: Vec<ModelSnapshot>,
}

impl Agent {
    pub fn new(setup: AgentSetup, seed: u64) -> Result<Self> {
        setup.agent.validate()?;
        setup.bounds.validate()?;
        if let Some(g) = &setup.agent.goal_point {
            crate::error::ensure_dim("goal point", setup.bounds.dim(), g.len())?;
        }
        Ok(Self {
            setup,
            rng: ChaCha8Rng::seed_from_u64(seed),
            model: None,
            dirichlet: None,
            goal_prior: None,
            goal_modes: Vec::new(),
            current_mode: None,
            command: None,
            vetoed: Vec::new(),
            last_control: 0.0,
            pending: None,
            step: 0,
            buffer: Vec::new(),
            episode: Episode::default(),
            episode_reward: 0.0,
            best_episode_reward: f64::NEG_INFINITY,
            sojourns: Vec::new(),
            rewarding_states: Vec::new(),
            refits: 0,
            events: Vec::new(),
            plans: Vec::new(),
            refit_events: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    pub fn setup(&self) -> &AgentSetup {
        &self.setup
    }

    pub fn model(&self) -> Option<&ModelState> {
        self.model.as_ref()
    }

    pub fn dirichlet(&self) -> Option<&DirichletTransitionModel> {
        self.dirichlet.as_ref()
    }

    pub fn goal_prior(&self) -> Option<&GoalPrior> {
        self.goal_prior.as_ref()
    }

    pub fn current_mode(&self) -> Option<usize> {
        self.current_mode
    }

    pub fn events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn plans(&self) -> &[PlanEvent] {
        &self.plans
    }

    pub fn refit_events(&self) -> &[RefitEvent] {
        &self.refit_events
    }

    pub fn snapshots(&self) -> &[ModelSnapshot] {
        &self.snapshots
    }

    pub fn best_episode_reward(&self) -> f64 {
        self.best_episode_reward.max(self.episode_reward)
    }

    /// Replay buffer: completed episodes plus the one in progress.
    pub fn replay_buffer(&self) -> Vec<Trajectory> {
        let mut data = self.buffer.clone();
        if let Some(t) = self.episode_trajectory(None) {
            data.push(t);
        }
        data
    }

    /// Chooses the control for observation `x`.
    pub fn act(&mut self, x: &[f64]) -> Result<f64> {
        crate::error::ensure_dim("observation", self.setup.bounds.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let limit = self.setup.agent.control_limit;
        let (control, replanned) = if self.model.is_none() {
            (self.rng.random_range(-limit..=limit), false)
        } else {
            self.act_with_model(x)?
        };
        let control = control.clamp(-limit, limit);
        self.pending = Some((x.to_vec(), control, replanned));
        Ok(control)
    }

    fn act_with_model(&mut self, x: &[f64]) -> Result<(f64, bool)> {
        let (mode, switched) = {
            let model = self.model.as_ref().expect("model present");
            let xv = DVector::from_column_slice(x);
            let u = DVector::from_element(model.params.control_dim(), self.last_control);
            let mode = model.params.most_likely_mode(&xv, &u)?;
            (mode, self.current_mode.is_some_and(|m| m != mode))
        };
        let expired = self
            .command
            .as_ref()
            .is_some_and(|c| c.elapsed >= self.setup.agent.max_dwell_time);
        let reason = if self.current_mode.is_none() || self.command.is_none() {
            Some(ReplanReason::Start)
        } else if switched {
            Some(ReplanReason::ModeSwitch)
        } else if expired {
            Some(ReplanReason::DwellExpired)
        } else {
            None
        };

        if let Some(reason) = reason {
            if reason != ReplanReason::Start {
                self.close_sojourn(x, mode)?;
            }
            self.current_mode = Some(mode);
            self.replan(x, mode, reason)?;
        }

        let command = self.command.as_mut().expect("command set after replanning");
        let model = self.model.as_ref().expect("model present");
        let control = match model.policies.get(mode, command.action) {
            Some(entry) => {
                let xv = DVector::from_column_slice(x);
                entry.policy.control(command.elapsed, &xv)[0]
            }
            None => {
                warn!("no cached policy for ({mode}, {}); vetoing it", command.action);
                if !self.vetoed.contains(&command.action) {
                    self.vetoed.push(command.action);
                }
                0.0
            }
        };
        command.elapsed += 1;
        Ok((control, reason.is_some()))
    }

    fn close_sojourn(&mut self, x: &[f64], next_mode: usize) -> Result<()> {
        let (Some(from), Some(command)) = (self.current_mode, self.command.as_ref()) else {
            return Ok(());
        };
        if let Some(d) = self.dirichlet.as_mut() {
            d.update(from, command.action, next_mode)?;
        }
        self.sojourns.push(Sojourn {
            start: command.start.clone(),
            start_control: command.start_control,
            target: command.target.clone(),
            end: x.to_vec(),
            end_control: self.last_control,
        });
        Ok(())
    }

    fn replan(&mut self, x: &[f64], mode: usize, reason: ReplanReason) -> Result<()> {
        let model = self.model.as_ref().expect("model present");
        let dirichlet = self.dirichlet.as_ref().expect("dirichlet present");
        let goal_prior = self.goal_prior.as_ref().expect("goal prior present");
        let k = model.params.num_modes();
        let costs = model.policies.cost_matrix(k);
        let problem = PlanningProblem {
            start: mode,
            model: dirichlet,
            goal_prior,
            costs: &costs,
            vetoed: &self.vetoed,
        };
        let seed = self.rng.next_u64();
        let decision = plan(&problem, &self.setup.planner, seed)?;
        self.vetoed.clear();
        let target = model
            .policies
            .get(mode, decision.action)
            .map(|e| e.goal.as_slice().to_vec())
            .or_else(|| model.control_priors[decision.action].as_ref().map(|p| p.point.clone()))
            .unwrap_or_else(|| x.to_vec());
        debug!(
            "step {}: mode {mode} -> action {} ({:?}, objective {:.4})",
            self.step, decision.action, reason, decision.objective
        );
        self.plans.push(PlanEvent {
            step: self.step,
            reason,
            state: x.to_vec(),
            mode,
            action: decision.action,
            objective: decision.objective,
            breakdown: decision.breakdown,
        });
        self.command = Some(Command {
            action: decision.action,
            target,
            start: x.to_vec(),
            start_control: self.last_control,
            elapsed: 0,
        });
        Ok(())
    }

    /// Records the outcome of the control returned by the last [`act`](Self::act).
    pub fn observe(&mut self, next: &[f64], reward: f64, done: bool) -> Result<()> {
        let Some((x, u, replanned)) = self.pending.take() else {
            return Err(Error::Config("observe called without a preceding act".into()));
        };
        self.events.push(StepEvent {
            step: self.step,
            state: x.clone(),
            control: u,
            mode: self.model.as_ref().and(self.current_mode),
            replanned,
            action: self.model.as_ref().and(self.command.as_ref().map(|c| c.action)),
            reward,
        });
        self.episode.states.push(x);
        self.episode.controls.push(u);
        self.episode.rewards.push(reward);
        self.episode_reward += reward;
        self.last_control = u;
        self.step += 1;

        if reward > self.setup.planner.reward_threshold {
            self.record_rewarding_state(next)?;
        }
        if done {
            if let Some(t) = self.episode_trajectory(Some(next)) {
                self.buffer.push(t);
            }
            self.best_episode_reward = self.best_episode_reward.max(self.episode_reward);
            self.episode = Episode::default();
            self.episode_reward = 0.0;
            self.current_mode = None;
            self.command = None;
            self.last_control = 0.0;
        }
        Ok(())
    }

    fn episode_trajectory(&self, last: Option<&[f64]>) -> Option<Trajectory> {
        let mut states: Vec<DVector<f64>> = self.episode.states.iter().map(|s| DVector::from_column_slice(s)).collect();
        let mut controls: Vec<DVector<f64>> = self.episode.controls.iter().map(|u| DVector::from_element(1, *u)).collect();
        let mut rewards = self.episode.rewards.clone();
        match last {
            Some(x) => {
                states.push(DVector::from_column_slice(x));
                controls.push(DVector::zeros(1));
                rewards.push(0.0);
            }
            None => {
                // the newest state has no recorded successor yet
                states.pop()?;
                controls.pop();
                rewards.pop();
                if let Some(x) = self.episode.states.last() {
                    states.push(DVector::from_column_slice(x));
                    controls.push(DVector::zeros(1));
                    rewards.push(0.0);
                }
            }
        }
        if states.len() < 2 {
            return None;
        }
        let mut t = Trajectory::from_states_controls(states, controls).ok()?;
        t.rewards = rewards;
        Some(t)
    }

    fn record_rewarding_state(&mut self, x: &[f64]) -> Result<()> {
        if self.rewarding_states.iter().any(|s| s == x) {
            return Ok(());
        }
        self.rewarding_states.push(x.to_vec());
        if self.model.is_some() {
            let before = self.goal_modes.clone();
            self.refresh_goals()?;
            if before != self.goal_modes {
                info!("reward observed; goal modes now {:?}", self.goal_modes);
            }
        }
        Ok(())
    }

    /// Mode of a continuous goal point; also marks it as preferred.
    pub fn lift_goal(&mut self, goal_point: &[f64]) -> Result<usize> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("no fitted model to lift the goal with".into()))?;
        let mode = lift_to_mode(&model.params, goal_point)?;
        if let Some(prior) = self.goal_prior.as_mut() {
            prior.prefer(mode, self.setup.planner.goal_preference);
        }
        if !self.goal_modes.contains(&mode) {
            self.goal_modes.push(mode);
        }
        Ok(mode)
    }

    // Rebuild the goal prior from the configured goal and all rewarding
    // states, and point each goal mode's self-policy at its continuous goal.
    fn refresh_goals(&mut self) -> Result<()> {
        let Some(model) = self.model.as_ref() else {
            return Ok(());
        };
        let k = model.params.num_modes();
        self.goal_prior = Some(GoalPrior::flat(k));
        self.goal_modes.clear();
        let mut points: Vec<Vec<f64>> = self.setup.agent.goal_point.iter().cloned().collect();
        points.extend(self.rewarding_states.iter().cloned());
        let mut targets: Vec<(usize, Vec<f64>)> = Vec::new();
        for p in points {
            let mode = self.lift_goal(&p)?;
            if !targets.iter().any(|(m, _)| *m == mode) {
                targets.push((mode, p));
            }
        }
        let model = self.model.as_mut().expect("model present");
        for (mode, point) in targets {
            let Some(entry) = model.policies.entries.get_mut(&(mode, mode)) else {
                continue;
            };
            let problem = LqrProblem::for_mode(&model.params.modes[mode], DVector::from_column_slice(&point), &self.setup.lqr);
            match solve(&problem) {
                Ok(policy) => {
                    entry.goal = problem.goal.clone();
                    entry.policy = policy;
                }
                Err(e) => warn!("goal controller for mode {mode} failed: {e}"),
            }
        }
        Ok(())
    }

    /// Refits on schedule unless an episode already reached the reward threshold.
    /// Returns whether a refit was attempted.
    pub fn maybe_refit(&mut self, global_step: usize) -> Result<bool> {
        let due = if self.model.is_none() {
            global_step >= self.setup.agent.burn_in()
        } else {
            global_step % self.setup.agent.refit_interval == 0
        };
        if !due || global_step == 0 || self.best_episode_reward() >= self.setup.agent.reward_refit_threshold {
            return Ok(false);
        }
        let data = self.replay_buffer();
        if data.is_empty() {
            return Ok(false);
        }
        let mut fit_config = self.setup.fit.clone();
        fit_config.seed = fit_config.seed.wrapping_add(self.refits);
        self.refits += 1;
        match self.rebuild(&data, &fit_config) {
            Ok(()) => {
                self.refit_events.push(RefitEvent {
                    step: global_step,
                    succeeded: true,
                    message: format!("{} modes, {} cached policies", self.setup.agent.num_modes, self.model.as_ref().map_or(0, |m| m.policies.len())),
                });
                let snapshot = self.snapshot(global_step).expect("model present after refit");
                self.snapshots.push(snapshot);
            }
            Err(e) => {
                warn!("refit at step {global_step} failed: {e}; keeping the previous model");
                self.refit_events.push(RefitEvent {
                    step: global_step,
                    succeeded: false,
                    message: e.to_string(),
                });
            }
        }
        Ok(true)
    }

    fn rebuild(&mut self, data: &[Trajectory], fit_config: &FitConfig) -> Result<()> {
        let outcome = fit(data, self.setup.agent.num_modes, fit_config)?;
        let model = build_model(outcome.params, &outcome.labels, data, &self.setup)?;
        let mut dirichlet = DirichletTransitionModel::init_priors(&model.adjacency);
        for s in &self.sojourns {
            let (from, action, to) = relabel(&model.params, s)?;
            dirichlet.update(from, action, to)?;
        }
        self.model = Some(model);
        self.dirichlet = Some(dirichlet);
        self.refresh_goals()?;
        self.current_mode = None;
        self.command = None;
        self.vetoed.clear();
        Ok(())
    }

    pub fn snapshot(&self, step: usize) -> Option<ModelSnapshot> {
        let model = self.model.as_ref()?;
        Some(ModelSnapshot {
            step,
            params: model.params.clone(),
            adjacency: model.adjacency.clone(),
            control_priors: model.control_priors.clone(),
            policies: model.policies.to_records(),
            dirichlet: self.dirichlet.clone()?,
            goal_prior: self.goal_prior.clone()?,
        })
    }
}

fn lift_to_mode(params: &HybridSystemParams, point: &[f64]) -> Result<usize> {
    crate::error::ensure_dim("goal point", params.state_dim(), point.len())?;
    params.region_of(&DVector::from_column_slice(point))
}

fn relabel(params: &HybridSystemParams, s: &Sojourn) -> Result<(usize, usize, usize)> {
    let classify = |x: &[f64], u: f64| {
        params.most_likely_mode(
            &DVector::from_column_slice(x),
            &DVector::from_element(params.control_dim(), u),
        )
    };
    Ok((
        classify(&s.start, s.start_control)?,
        lift_to_mode(params, &s.target)?,
        classify(&s.end, s.end_control)?,
    ))
}

/// Partition, control priors and policy cache for freshly fitted parameters.
pub fn build_model(
    params: HybridSystemParams,
    labels: &[Vec<usize>],
    data: &[Trajectory],
    setup: &AgentSetup,
) -> Result<ModelState> {
    let k = params.num_modes();
    let bounds = &setup.bounds;
    let adjacency = extract_adjacency(&params, bounds)?;
    // centroid of the states labelled with each mode
    let m = params.state_dim();
    let mut sums = vec![DVector::zeros(m); k];
    let mut counts = vec![0usize; k];
    for (traj, modes) in data.iter().zip(labels) {
        for (x, &z) in traj.states.iter().zip(modes) {
            if z < k {
                sums[z] += x;
                counts[z] += 1;
            }
        }
    }
    let centroids: Vec<Option<DVector<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    // ascent starts from where the mode was observed, falling back to the LP witness
    let mut control_priors = Vec::with_capacity(k);
    for j in 0..k {
        let witness = match region_polyhedron(&params, j, bounds).feasibility() {
            Feasibility::Feasible(p) => DVector::from_vec(p),
            Feasibility::Infeasible => {
                control_priors.push(None);
                continue;
            }
            Feasibility::Undecided => bounds.center(),
        };
        let init = match setup.agent.prior_start {
            PriorStart::Centroid => centroids[j].clone().unwrap_or(witness),
            PriorStart::Vertex => witness,
        };
        let prior = control_prior(&params, j, bounds, &init, &setup.agent.control_prior)?;
        if !prior.reached {
            warn!(
                "control prior for mode {j} stalled at probability {:.3}",
                prior.attained_probability
            );
        }
        control_priors.push(Some(prior));
    }

    let policies = cache_policies(&params, &adjacency, &control_priors, &centroids, &setup.lqr)?;
    Ok(ModelState {
        params,
        adjacency,
        control_priors,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{ModeDynamics, Recurrence};
    use nalgebra::DMatrix;

    fn setup_1d(num_modes: usize) -> AgentSetup {
        AgentSetup {
            agent: AgentConfig {
                num_modes,
                refit_interval: 100,
                goal_point: None,
                ..AgentConfig::default()
            },
            planner: PlannerConfig::default(),
            lqr: LqrConfig::default(),
            fit: FitConfig::default(),
            bounds: Bounds::new(vec![-1.0], vec![1.0]).unwrap(),
        }
    }

    // two modes split at x = 0; mode 0 on the positive side
    fn split_params() -> HybridSystemParams {
        let modes = vec![
            ModeDynamics::new(
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 0.1),
                DVector::zeros(1),
                DVector::from_element(1, 1e-4),
            ),
            ModeDynamics::new(
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 0.1),
                DVector::zeros(1),
                DVector::from_element(1, 1e-4),
            ),
        ];
        let recurrence = Recurrence {
            w_x: DMatrix::from_column_slice(2, 1, &[5.0, -5.0]),
            w_u: DMatrix::zeros(2, 1),
            bias: DVector::zeros(2),
        };
        HybridSystemParams::new(modes, recurrence, DVector::from_element(1, 1e-6)).unwrap()
    }

    fn agent_with(params: HybridSystemParams) -> Agent {
        let setup = setup_1d(params.num_modes());
        let mut agent = Agent::new(setup.clone(), 3).unwrap();
        let model = build_model(params, &[], &[], &setup).unwrap();
        agent.dirichlet = Some(DirichletTransitionModel::init_priors(&model.adjacency));
        agent.model = Some(model);
        agent.refresh_goals().unwrap();
        agent
    }

    #[test]
    fn lift_goal_picks_positive_side() {
        let mut agent = agent_with(split_params());
        assert_eq!(agent.lift_goal(&[0.5]).unwrap(), 0);
        assert_eq!(agent.lift_goal(&[0.5]).unwrap(), 0);
        assert_eq!(agent.goal_prior().unwrap().preferred_modes(), vec![0]);
        assert_eq!(agent.lift_goal(&[-0.5]).unwrap(), 1);
    }

    #[test]
    fn lift_goal_single_mode() {
        let p = HybridSystemParams::new(
            vec![split_params().modes[0].clone()],
            Recurrence::zeros(1, 1, 1),
            DVector::from_element(1, 1e-6),
        )
        .unwrap();
        let mut agent = agent_with(p);
        assert_eq!(agent.lift_goal(&[0.3]).unwrap(), 0);
    }

    #[test]
    fn replans_only_on_switch_or_dwell() {
        let mut agent = agent_with(split_params());
        agent.setup.agent.max_dwell_time = 5;
        let mut x = 0.5;
        let mut planned = 0;
        for t in 0..12 {
            // stay in mode 0 for 12 steps, then cross
            agent.act(&[x]).unwrap();
            agent.observe(&[x], 0.0, false).unwrap();
            planned = agent.plans().len();
            assert_eq!(planned, 1 + t / 5, "step {t}");
        }
        x = -0.5;
        agent.act(&[x]).unwrap();
        agent.observe(&[x], 0.0, false).unwrap();
        assert_eq!(agent.plans().len(), planned + 1);
        assert_eq!(agent.plans().last().unwrap().reason, ReplanReason::ModeSwitch);
        let total: f64 = agent.dirichlet().unwrap().raw().iter().sum();
        let prior: f64 = DirichletTransitionModel::init_priors(&agent.model().unwrap().adjacency)
            .raw()
            .iter()
            .sum();
        // two dwell expirations and one switch
        assert!((total - prior - 3.0).abs() < 1e-9);
        assert!(agent.events().iter().all(|e| e.control.abs() <= 1.0));
    }

    #[test]
    fn burn_in_controls_are_random_and_bounded() {
        let mut agent = Agent::new(setup_1d(2), 9).unwrap();
        let mut seen = Vec::new();
        for _ in 0..50 {
            let u = agent.act(&[0.0]).unwrap();
            agent.observe(&[0.0], 0.0, false).unwrap();
            assert!(u.abs() <= 1.0);
            seen.push(u);
        }
        assert!(seen.iter().any(|u| *u > 0.0) && seen.iter().any(|u| *u < 0.0));
        assert!(agent.plans().is_empty());
    }

    #[test]
    fn refit_schedule_and_reward_guard() {
        let mut agent = Agent::new(setup_1d(1), 1).unwrap();
        let mut x = 0.0f64;
        for step in 1..=100 {
            let u = agent.act(&[x]).unwrap();
            let next = (0.9 * x + 0.1 * u).clamp(-1.0, 1.0);
            agent.observe(&[next], 0.0, false).unwrap();
            x = next;
            let refit = agent.maybe_refit(step).unwrap();
            assert_eq!(refit, step == 100, "step {step}");
        }
        assert!(agent.model().is_some());
        assert_eq!(agent.snapshots().len(), 1);
        let keys: Vec<_> = agent.model().unwrap().policies.entries.keys().copied().collect();
        assert!(keys.iter().all(|&(i, j)| agent.model().unwrap().adjacency.get(i, j)));

        agent.best_episode_reward = 95.0;
        for step in 101..=200 {
            agent.act(&[x]).unwrap();
            agent.observe(&[x], 0.0, false).unwrap();
            assert!(!agent.maybe_refit(step).unwrap());
        }
    }
}
