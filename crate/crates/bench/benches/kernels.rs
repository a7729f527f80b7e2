use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use std::hint::black_box;

use hha_bench::{fitted_model, mountain_car_bounds, mountain_car_data};
use hha_core::hybrid::{fit, FitConfig};
use hha_core::lqr::{self, LqrConfig, LqrProblem};
use hha_core::partition::extract_adjacency;
use hha_core::planner::{plan, DirichletTransitionModel, GoalPrior, PlannerConfig, PlanningProblem};

fn bench_lqr(c: &mut Criterion) {
    let params = fitted_model();
    let problem = LqrProblem::for_mode(&params.modes[0], DVector::from_vec(vec![0.45, 0.0]), &LqrConfig::default());
    c.bench_function("lqr_solve_s50", |b| b.iter(|| lqr::solve(black_box(&problem)).unwrap()));
}

fn bench_adjacency(c: &mut Criterion) {
    let params = fitted_model();
    let bounds = mountain_car_bounds();
    c.bench_function("adjacency_k5", |b| b.iter(|| extract_adjacency(black_box(&params), &bounds).unwrap()));
}

fn bench_plan(c: &mut Criterion) {
    let params = fitted_model();
    let adjacency = extract_adjacency(&params, &mountain_car_bounds()).unwrap();
    let k = adjacency.size();
    let model = DirichletTransitionModel::init_priors(&adjacency);
    let mut goal = GoalPrior::flat(k);
    goal.prefer(k - 1, 5.0);
    let costs: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if adjacency.get(i, j) { 1.0 } else { f64::INFINITY }).collect())
        .collect();
    let problem = PlanningProblem {
        start: 0,
        model: &model,
        goal_prior: &goal,
        costs: &costs,
        vetoed: &[],
    };
    let config = PlannerConfig::default();
    c.bench_function("plan_k5_t3", |b| b.iter(|| plan(black_box(&problem), &config, 7).unwrap()));
}

fn bench_fit(c: &mut Criterion) {
    let data = mountain_car_data(1000);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("hard_em_k5_1000", |b| b.iter(|| fit(black_box(&data), 5, &FitConfig::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_lqr, bench_adjacency, bench_plan, bench_fit);
criterion_main!(benches);
