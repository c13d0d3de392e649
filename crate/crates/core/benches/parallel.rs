//! Sequential versus data-parallel execution of the hot paths.
//!
//! Each benchmark runs once inside a one-thread pool and once inside the
//! default pool. Building without default features (`--no-default-features`)
//! swaps in the sequential fallback for both.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxqnorm::completion::{complete_with_cv, CvOptions};
use maxqnorm::observation::{draw_indices, observe, SamplingDistribution};
use maxqnorm::solvers::{initial_factors, loss_gradient, solve, SolverParams};
use maxqnorm::tensor::{random_low_rank, FactorKind};
use maxqnorm::{ObservationSet, QnormBound, Shape};
use rayon::ThreadPool;

fn pools() -> Vec<(String, ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut out = vec![(
        "1 thread".to_string(),
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
    )];
    if all > 1 {
        out.push((
            format!("{all} threads"),
            rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap(),
        ));
    }
    out
}

fn problem(n: usize, rank: usize, rate: f64) -> (Shape, ObservationSet) {
    let shape = Shape::new(vec![n, n, n]).unwrap();
    let (_, t) = random_low_rank(&shape, rank, FactorKind::Sign, 1).unwrap();
    let m = (rate * shape.len() as f64) as usize;
    let idx = draw_indices(&SamplingDistribution::uniform(shape.clone()), m, 2).unwrap();
    (shape.clone(), observe(&t, idx, 0.0, 3).unwrap())
}

fn label() -> &'static str {
    if maxqnorm::par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    }
}

fn gradient(c: &mut Criterion) {
    let (shape, obs) = problem(30, 5, 0.2);
    let bound = QnormBound::budget(3.0, 3).unwrap();
    let factors = initial_factors(&shape, 60, &bound, 0).unwrap();
    let mut group = c.benchmark_group(format!("loss_gradient/{}", label()));
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            pool.install(|| b.iter(|| loss_gradient(&factors, &obs, 0).unwrap()))
        });
    }
    group.finish();
}

fn pqn_solve(c: &mut Criterion) {
    let (shape, obs) = problem(20, 3, 0.1);
    let bound = QnormBound::budget(3.0, 3).unwrap();
    let params = SolverParams { max_iters: 50, ..SolverParams::default() };
    let mut group = c.benchmark_group(format!("pqn_50_iters/{}", label()));
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            pool.install(|| b.iter(|| solve(&obs, &shape, &bound, 40, &params, None).unwrap()))
        });
    }
    group.finish();
}

fn cross_validation(c: &mut Criterion) {
    let (shape, obs) = problem(10, 2, 0.3);
    let params = SolverParams { max_iters: 30, ..SolverParams::default() };
    let mut group = c.benchmark_group(format!("five_point_search/{}", label()));
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            pool.install(|| {
                b.iter(|| complete_with_cv(&obs, &shape, 1.0, 4.0, &params, 1.0, &CvOptions::default()).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, pqn_solve, cross_validation);
criterion_main!(benches);
