//! Experiment runner: coverage and reward protocols on Mountain Car for the
//! hierarchical agent, the same agent without exploration bonuses, and a
//! uniform random controller.
//!
//! Runs for different seeds are independent and execute in parallel. Every
//! random draw comes from streams derived from the run seed, so identical
//! configuration and seed reproduce identical output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{build_model, Agent, AgentConfig, AgentSetup, ModelSnapshot, PlanEvent, ReplanReason, StepEvent};
use crate::env::{EnvConfig, EnvState, MountainCar};
use crate::error::{Error, Result};
use crate::hybrid::{fit, FitConfig, HybridSystemParams, Trajectory};
use crate::lqr::LqrConfig;
use crate::partition::{extract_adjacency, AdjacencyMatrix, Bounds};
use crate::planner::{DirichletTransitionModel, GoalPrior, PlannerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hha,
    HhaNoIg,
    Random,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Hha => "hha",
            Mode::HhaNoIg => "hha_no_ig",
            Mode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hha" => Ok(Mode::Hha),
            "hha_no_ig" => Ok(Mode::HhaNoIg),
            "random" => Ok(Mode::Random),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub mode: Mode,
    /// Step budget of a coverage run.
    pub total_steps: usize,
    /// Episode budget of a reward run.
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
    /// `(position bins, velocity bins)`.
    pub coverage_grid: (usize, usize),
    pub checkpoint_interval: usize,
    pub output_dir: PathBuf,
    pub save_snapshots: bool,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            mode: Mode::Hha,
            total_steps: 10_000,
            n_episodes: 20,
            seeds: vec![0, 1, 2],
            coverage_grid: (50, 50),
            checkpoint_interval: 100,
            output_dir: PathBuf::from("results"),
            save_snapshots: true,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub planner: PlannerConfig,
    pub lqr: LqrConfig,
    pub fit: FitConfig,
    pub experiment: ExperimentBlock,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        if e.coverage_grid.0 < 2 || e.coverage_grid.1 < 2 {
            return Err(Error::Config("coverage grid needs at least 2 bins per axis".into()));
        }
        if e.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be at least 1".into()));
        }
        if self.planner.horizon == 0 {
            return Err(Error::Config("planner.horizon must be at least 1".into()));
        }
        if self.lqr.horizon == 0 {
            return Err(Error::Config("lqr.horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        let (lower, upper) = self.env.state_bounds();
        Bounds {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        }
    }

    /// Agent wiring for `mode`; the no-bonus variant zeroes both bonus weights.
    pub fn agent_setup(&self, mode: Mode) -> AgentSetup {
        let mut planner = self.planner.clone();
        if mode == Mode::HhaNoIg {
            planner.info_gain_weight = 0.0;
            planner.entropy_weight = 0.0;
        }
        AgentSetup {
            agent: self.agent.clone(),
            planner,
            lqr: self.lqr.clone(),
            fit: self.fit.clone(),
            bounds: self.bounds(),
        }
    }
}

/// Occupancy grid over the position × velocity box.
#[derive(Debug, Clone)]
pub struct CoverageGrid {
    rows: usize,
    cols: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    visited: Vec<bool>,
    count: usize,
}

impl CoverageGrid {
    pub fn new(rows: usize, cols: usize, lower: [f64; 2], upper: [f64; 2]) -> Self {
        Self {
            rows,
            cols,
            lower,
            upper,
            visited: vec![false; rows * cols],
            count: 0,
        }
    }

    pub fn for_env(env: &EnvConfig, grid: (usize, usize)) -> Self {
        let (lower, upper) = env.state_bounds();
        Self::new(grid.0, grid.1, lower, upper)
    }

    fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
        let f = ((v - lo) / (hi - lo) * n as f64).floor();
        if f.is_nan() || f < 0.0 {
            0
        } else {
            (f as usize).min(n - 1)
        }
    }

    pub fn cell(&self, s: EnvState) -> usize {
        let r = Self::bin(s.position, self.lower[0], self.upper[0], self.rows);
        let c = Self::bin(s.velocity, self.lower[1], self.upper[1], self.cols);
        r * self.cols + c
    }

    pub fn visit(&mut self, s: EnvState) {
        let cell = self.cell(s);
        if !self.visited[cell] {
            self.visited[cell] = true;
            self.count += 1;
        }
    }

    pub fn cells_visited(&self) -> usize {
        self.count
    }

    pub fn total_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn fraction(&self) -> f64 {
        self.count as f64 / self.total_cells() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub step: usize,
    pub cells_visited: usize,
    pub fraction: f64,
}

/// Everything recorded for one (mode, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub mode: Mode,
    pub seed: u64,
    pub steps: Vec<StepEvent>,
    pub episodes: Vec<EpisodeRecord>,
    pub coverage: Vec<CoveragePoint>,
    pub final_coverage: f64,
    pub first_reward_step: Option<usize>,
    pub plans: Vec<PlanEvent>,
    pub refits: usize,
    pub snapshots: Vec<ModelSnapshot>,
}

impl RunRecord {
    pub fn planner_counts(&self) -> (usize, usize, usize) {
        let count = |r: ReplanReason| self.plans.iter().filter(|p| p.reason == r).count();
        (
            count(ReplanReason::Start),
            count(ReplanReason::ModeSwitch),
            count(ReplanReason::DwellExpired),
        )
    }

    pub fn goals_reached(&self) -> usize {
        self.episodes.iter().filter(|e| e.reached_goal).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Budget {
    Steps(usize),
    Episodes(usize),
}

enum Controller {
    Agent(Box<Agent>),
    Random(ChaCha8Rng),
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One run of `mode` under `budget`. Pure given the config and seed.
pub fn run(config: &ExperimentConfig, mode: Mode, seed: u64, budget: Budget) -> Result<RunRecord> {
    config.validate()?;
    let mut resets = stream(seed, 1);
    let mut env = MountainCar::new(config.env.clone(), resets.next_u64())?;
    let mut controller = match mode {
        Mode::Random => Controller::Random(stream(seed, 3)),
        _ => Controller::Agent(Box::new(Agent::new(config.agent_setup(mode), stream(seed, 2).next_u64())?)),
    };
    let limit = config.agent.control_limit;
    let mut grid = CoverageGrid::for_env(&config.env, config.experiment.coverage_grid);
    grid.visit(env.state());
    let interval = config.experiment.checkpoint_interval;
    let mut coverage = vec![CoveragePoint {
        step: 0,
        cells_visited: grid.cells_visited(),
        fraction: grid.fraction(),
    }];
    let mut random_steps = Vec::new();
    let mut episodes = Vec::new();
    let mut episode_reward = 0.0;
    let mut first_reward_step = None;
    let mut step = 0;
    loop {
        let done_budget = match budget {
            Budget::Steps(n) => step >= n,
            Budget::Episodes(n) => episodes.len() >= n,
        };
        if done_budget {
            break;
        }
        let x = env.state();
        let u = match &mut controller {
            Controller::Agent(agent) => agent.act(&x.to_vec())?,
            Controller::Random(rng) => rng.random_range(-limit..=limit),
        };
        let out = env.step(u)?;
        step += 1;
        match &mut controller {
            Controller::Agent(agent) => {
                agent.observe(&out.state.to_vec(), out.reward, out.done)?;
                agent.maybe_refit(step)?;
            }
            Controller::Random(_) => random_steps.push(StepEvent {
                step: step - 1,
                state: x.to_vec().to_vec(),
                control: u,
                mode: None,
                replanned: false,
                action: None,
                reward: out.reward,
            }),
        }
        episode_reward += out.reward;
        if out.reached_goal && first_reward_step.is_none() {
            first_reward_step = Some(step);
        }
        grid.visit(out.state);
        if out.done {
            episodes.push(EpisodeRecord {
                episode: episodes.len(),
                reward: episode_reward,
                steps: env.elapsed(),
                reached_goal: out.reached_goal,
            });
            episode_reward = 0.0;
            let start = env.reset(resets.next_u64());
            grid.visit(start);
        }
        if step % interval == 0 {
            coverage.push(CoveragePoint {
                step,
                cells_visited: grid.cells_visited(),
                fraction: grid.fraction(),
            });
        }
    }
    if coverage.last().is_some_and(|c| c.step != step) {
        coverage.push(CoveragePoint {
            step,
            cells_visited: grid.cells_visited(),
            fraction: grid.fraction(),
        });
    }
    let (steps, plans, refits, snapshots) = match controller {
        Controller::Agent(agent) => (
            agent.events().to_vec(),
            agent.plans().to_vec(),
            agent.refit_events().iter().filter(|r| r.succeeded).count(),
            agent.snapshots().to_vec(),
        ),
        Controller::Random(_) => (random_steps, Vec::new(), 0, Vec::new()),
    };
    Ok(RunRecord {
        mode,
        seed,
        steps,
        episodes,
        coverage,
        final_coverage: grid.fraction(),
        first_reward_step,
        plans,
        refits,
        snapshots,
    })
}

/// Coverage of a logged trajectory, recomputed from the raw states.
pub fn coverage_of_states(env: &EnvConfig, grid: (usize, usize), states: &[EnvState]) -> f64 {
    let mut g = CoverageGrid::for_env(env, grid);
    for s in states {
        g.visit(*s);
    }
    g.fraction()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_coverage: f64,
    pub total_reward: f64,
    pub episodes: usize,
    pub goals_reached: usize,
    pub first_reward_step: Option<usize>,
    pub planner_start_events: usize,
    pub planner_switch_events: usize,
    pub planner_dwell_events: usize,
    pub refits: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub mode: Mode,
    pub seeds: Vec<SeedSummary>,
    pub coverage: Spread,
    pub episode_reward: Spread,
    /// Per-episode mean and standard deviation across seeds.
    pub reward_curve: Vec<Spread>,
}

impl ExperimentSummary {
    fn from_runs(experiment: &str, mode: Mode, runs: &[RunRecord]) -> Self {
        let seeds: Vec<SeedSummary> = runs
            .iter()
            .map(|r| {
                let (start, switch, dwell) = r.planner_counts();
                SeedSummary {
                    seed: r.seed,
                    final_coverage: r.final_coverage,
                    total_reward: r.episodes.iter().map(|e| e.reward).sum(),
                    episodes: r.episodes.len(),
                    goals_reached: r.goals_reached(),
                    first_reward_step: r.first_reward_step,
                    planner_start_events: start,
                    planner_switch_events: switch,
                    planner_dwell_events: dwell,
                    refits: r.refits,
                }
            })
            .collect();
        let coverages: Vec<f64> = runs.iter().map(|r| r.final_coverage).collect();
        let rewards: Vec<f64> = runs.iter().flat_map(|r| r.episodes.iter().map(|e| e.reward)).collect();
        let longest = runs.iter().map(|r| r.episodes.len()).max().unwrap_or(0);
        let reward_curve = (0..longest)
            .map(|i| {
                let v: Vec<f64> = runs.iter().filter_map(|r| r.episodes.get(i).map(|e| e.reward)).collect();
                Spread::of(&v)
            })
            .collect();
        Self {
            experiment: experiment.to_string(),
            mode,
            seeds,
            coverage: Spread::of(&coverages),
            episode_reward: Spread::of(&rewards),
            reward_curve,
        }
    }
}

pub struct ExperimentOutput {
    pub runs: Vec<RunRecord>,
    pub summary: ExperimentSummary,
    pub directory: PathBuf,
}

fn prepare_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.experiment.output_dir.join(config.experiment.mode.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn run_all(config: &ExperimentConfig, budget: Budget) -> Result<Vec<RunRecord>> {
    let mode = config.experiment.mode;
    config
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            info!("{} seed {seed}: starting", mode.name());
            run(config, mode, seed, budget)
        })
        .collect()
}

/// Fixed step budget per seed; writes coverage, trajectory and summary files.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dir = prepare_dir(config)?;
    let runs = run_all(config, Budget::Steps(config.experiment.total_steps))?;
    for r in &runs {
        write_file(&dir.join(format!("coverage_seed{}.csv", r.seed)), &coverage_csv(&r.coverage))?;
        write_run_logs(&dir, config, r)?;
    }
    let summary = ExperimentSummary::from_runs("coverage", config.experiment.mode, &runs);
    write_file(&dir.join("coverage_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentOutput {
        runs,
        summary,
        directory: dir,
    })
}

/// Fixed episode budget per seed; writes reward, trajectory and summary files.
pub fn run_reward_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dir = prepare_dir(config)?;
    let runs = run_all(config, Budget::Episodes(config.experiment.n_episodes))?;
    for r in &runs {
        write_file(&dir.join(format!("reward_seed{}.csv", r.seed)), &reward_csv(&r.episodes))?;
        write_run_logs(&dir, config, r)?;
    }
    let summary = ExperimentSummary::from_runs("reward", config.experiment.mode, &runs);
    write_file(&dir.join("reward_curve.csv"), &reward_curve_csv(&summary.reward_curve))?;
    write_file(&dir.join("reward_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentOutput {
        runs,
        summary,
        directory: dir,
    })
}

fn write_run_logs(dir: &Path, config: &ExperimentConfig, r: &RunRecord) -> Result<()> {
    write_file(&dir.join(format!("trajectory_seed{}.csv", r.seed)), &trajectory_csv(&r.steps))?;
    if r.mode != Mode::Random {
        let mut plans = String::new();
        for p in &r.plans {
            plans.push_str(&serde_json::to_string(p)?);
            plans.push('\n');
        }
        write_file(&dir.join(format!("plans_seed{}.jsonl", r.seed)), &plans)?;
    }
    if config.experiment.save_snapshots && !r.snapshots.is_empty() {
        let snap_dir = dir.join(format!("snapshots_seed{}", r.seed));
        fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
        for s in &r.snapshots {
            write_file(&snap_dir.join(format!("refit_{}.json", s.step)), &serde_json::to_string(s)?)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Float rendering shared by every CSV: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn trajectory_csv(steps: &[StepEvent]) -> String {
    let mut out = String::from("step,position,velocity,control,mode,replanned,action,reward\n");
    for e in steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.step,
            fmt_float(e.state[0]),
            fmt_float(e.state[1]),
            fmt_float(e.control),
            opt(e.mode),
            e.replanned,
            opt(e.action),
            fmt_float(e.reward)
        );
    }
    out
}

pub fn coverage_csv(points: &[CoveragePoint]) -> String {
    let mut out = String::from("step,cells_visited,fraction\n");
    for c in points {
        let _ = writeln!(out, "{},{},{}", c.step, c.cells_visited, fmt_float(c.fraction));
    }
    out
}

pub fn reward_csv(episodes: &[EpisodeRecord]) -> String {
    let mut out = String::from("episode,reward,steps,reached_goal\n");
    for e in episodes {
        let _ = writeln!(out, "{},{},{},{}", e.episode, fmt_float(e.reward), e.steps, e.reached_goal);
    }
    out
}

fn reward_curve_csv(curve: &[Spread]) -> String {
    let mut out = String::from("episode,mean,std\n");
    for (i, s) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", i, fmt_float(s.mean), fmt_float(s.std));
    }
    out
}

/// Parses a trajectory log back into episodes. Consecutive rows that are not
/// linked by one environment step start a new episode.
pub fn read_trajectory_csv(text: &str, env: &EnvConfig) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Config(format!("trajectory log: {e}")))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("trajectory log has no `{name}` column")))
    };
    let (pi, vi, ui) = (column("position")?, column("velocity")?, column("control")?);
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("trajectory log: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("trajectory log row {}: bad field {i}", n + 1)))
        };
        rows.push((EnvState::new(num(pi)?, num(vi)?), num(ui)?));
    }
    let mut episodes = Vec::new();
    let mut states: Vec<DVector<f64>> = Vec::new();
    let mut controls: Vec<DVector<f64>> = Vec::new();
    let mut flush = |states: &mut Vec<DVector<f64>>, controls: &mut Vec<DVector<f64>>| {
        if states.len() >= 2 {
            if let Some(last) = controls.last_mut() {
                last.fill(0.0);
            }
            if let Ok(t) = Trajectory::from_states_controls(std::mem::take(states), std::mem::take(controls)) {
                episodes.push(t);
            }
        }
        states.clear();
        controls.clear();
    };
    for (i, (s, u)) in rows.iter().enumerate() {
        if i > 0 {
            let (prev, pu) = rows[i - 1];
            let linked = env
                .transition(prev, pu)
                .map(|t| (t.state.position - s.position).abs() < 1e-9 && (t.state.velocity - s.velocity).abs() < 1e-9)
                .unwrap_or(false);
            if !linked {
                flush(&mut states, &mut controls);
            }
        }
        states.push(DVector::from_vec(s.to_vec().to_vec()));
        controls.push(DVector::from_element(1, *u));
    }
    flush(&mut states, &mut controls);
    Ok(episodes)
}

/// Random-control rollouts used when no log is supplied to the fit demo.
pub fn random_rollouts(env: &EnvConfig, steps: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut rng = stream(seed, 4);
    let mut car = MountainCar::new(env.clone(), rng.next_u64())?;
    let mut out = Vec::new();
    let mut states = vec![DVector::from_vec(car.state().to_vec().to_vec())];
    let mut controls = Vec::new();
    for _ in 0..steps {
        let u: f64 = rng.random_range(-1.0..=1.0);
        let o = car.step(u)?;
        controls.push(DVector::from_element(1, u));
        states.push(DVector::from_vec(o.state.to_vec().to_vec()));
        if o.done {
            controls.push(DVector::zeros(1));
            out.push(Trajectory::from_states_controls(std::mem::take(&mut states), std::mem::take(&mut controls))?);
            states = vec![DVector::from_vec(car.reset(rng.next_u64()).to_vec().to_vec())];
        }
    }
    if states.len() >= 2 {
        controls.push(DVector::zeros(1));
        out.push(Trajectory::from_states_controls(states, controls)?);
    }
    Ok(out)
}

/// Fits a model to `data` and derives the partition, priors and policies.
pub fn fit_demo(config: &ExperimentConfig, data: &[Trajectory], seed: u64) -> Result<ModelSnapshot> {
    let mut fit_config = config.fit.clone();
    fit_config.seed = seed;
    let outcome = fit(data, config.agent.num_modes, &fit_config)?;
    let setup = config.agent_setup(Mode::Hha);
    let model = build_model(outcome.params, &outcome.labels, data, &setup)?;
    let dirichlet = DirichletTransitionModel::init_priors(&model.adjacency);
    let mut goal_prior = GoalPrior::flat(model.params.num_modes());
    if let Some(g) = &config.agent.goal_point {
        let mode = model.params.region_of(&DVector::from_column_slice(g))?;
        goal_prior.prefer(mode, config.planner.goal_preference);
    }
    Ok(ModelSnapshot {
        step: data.iter().map(Trajectory::num_transitions).sum(),
        policies: model.policies.to_records(),
        params: model.params,
        adjacency: model.adjacency,
        control_priors: model.control_priors,
        dirichlet,
        goal_prior,
    })
}

/// Spectral radius of every mode's state matrix.
pub fn spectral_radii(params: &HybridSystemParams) -> Vec<f64> {
    params
        .modes
        .iter()
        .map(|m| {
            m.a.complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Human-readable model summary: mode count, spectral radii, adjacency.
pub fn model_report(params: &HybridSystemParams, adjacency: &AdjacencyMatrix) -> String {
    let mut out = String::new();
    let k = params.num_modes();
    let _ = writeln!(out, "modes: {k}");
    let _ = writeln!(out, "state dim: {}, control dim: {}", params.state_dim(), params.control_dim());
    let _ = writeln!(out, "spectral radius of A per mode:");
    for (i, r) in spectral_radii(params).iter().enumerate() {
        let _ = writeln!(out, "  mode {i}: {r:.6}");
    }
    let _ = writeln!(out, "adjacency:");
    let _ = write!(out, "    ");
    for j in 0..k {
        let _ = write!(out, " {j:>2}");
    }
    out.push('\n');
    for i in 0..k {
        let _ = write!(out, "  {i:>2}");
        for j in 0..k {
            let _ = write!(out, " {:>2}", if adjacency.get(i, j) { "1" } else { "." });
        }
        out.push('\n');
    }
    out
}

/// Report for a snapshot file or a bare parameter document.
pub fn inspect(path: &Path, bounds: &Bounds) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(snapshot) = serde_json::from_str::<ModelSnapshot>(&text) {
        return Ok(model_report(&snapshot.params, &snapshot.adjacency));
    }
    let params: HybridSystemParams = serde_json::from_str(&text)?;
    let adjacency = extract_adjacency(&params, bounds)?;
    Ok(model_report(&params, &adjacency))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.experiment.seeds = vec![4];
        c.experiment.save_snapshots = false;
        c
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"env": {"gravity": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": {"seeds": []}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"experiment": {"mode": "hha_no_ig"}}"#).unwrap();
        assert_eq!(c.experiment.mode, Mode::HhaNoIg);
        let setup = c.agent_setup(Mode::HhaNoIg);
        assert_eq!(setup.planner.info_gain_weight, 0.0);
        assert_eq!(setup.planner.entropy_weight, 0.0);
    }

    #[test]
    fn zero_step_random_run_covers_start_cell() {
        let c = small_config();
        let r = run(&c, Mode::Random, 0, Budget::Steps(0)).unwrap();
        assert_eq!(r.final_coverage, 1.0 / 2500.0);
    }

    #[test]
    fn coverage_is_monotone_and_matches_recount() {
        let c = small_config();
        let r = run(&c, Mode::Random, 11, Budget::Steps(1500)).unwrap();
        assert!(r.coverage.windows(2).all(|w| w[0].cells_visited <= w[1].cells_visited));
        // all visited states: logged pre-states plus the final post-state
        let mut states: Vec<EnvState> = r.steps.iter().map(|e| EnvState::new(e.state[0], e.state[1])).collect();
        let last = r.steps.last().unwrap();
        let t = c.env.transition(EnvState::new(last.state[0], last.state[1]), last.control).unwrap();
        states.push(t.state);
        let recount = coverage_of_states(&c.env, c.experiment.coverage_grid, &states);
        assert_eq!(recount, r.final_coverage);
    }

    #[test]
    fn random_episode_rewards_are_control_costs() {
        let c = small_config();
        let r = run(&c, Mode::Random, 2, Budget::Episodes(3)).unwrap();
        for e in r.episodes.iter().filter(|e| !e.reached_goal) {
            assert_eq!(e.steps, 200);
            assert!(e.reward <= 0.0);
        }
    }

    #[test]
    fn trajectory_log_round_trips_into_episodes() {
        let c = small_config();
        let r = run(&c, Mode::Random, 5, Budget::Steps(450)).unwrap();
        let parsed = read_trajectory_csv(&trajectory_csv(&r.steps), &c.env).unwrap();
        // two resets at steps 200 and 400
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].len(), 200);
        assert_eq!(parsed[0].states[10][0], r.steps[10].state[0]);
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-100.0), "-1.0000000000000000e2");
    }
}
