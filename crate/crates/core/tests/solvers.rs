use maxqnorm::norms::{max_qnorm_upper_bound, project_rows, two_inf_norm, QnormBound};
use maxqnorm::observation::{draw_indices, observe, ObservationSet, SamplingDistribution};
use maxqnorm::solvers::{
    feasibility_violation, initial_factors, loss, loss_gradient, solve, solve_pgd, solve_pqn, solve_sgd,
    Method, SolverParams,
};
use maxqnorm::tensor::{cp_compose, random_low_rank, CPFactors, FactorKind, Index, Shape};
use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

fn cube(n: usize) -> Shape {
    Shape::new(vec![n, n, n]).unwrap()
}

fn random_factors(dims: &[usize], k: usize, rng: &mut impl Rng) -> CPFactors {
    CPFactors::new(
        dims.iter()
            .map(|&n| Array2::from_shape_simple_fn((n, k), || rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
    .unwrap()
}

fn sampled(shape: &Shape, rank: usize, kind: FactorKind, m: usize, seed: u64) -> (ObservationSet, maxqnorm::DenseTensor) {
    let (_, t) = random_low_rank(shape, rank, kind, seed).unwrap();
    let idx = draw_indices(&SamplingDistribution::uniform(shape.clone()), m, seed + 1).unwrap();
    (observe(&t, idx, 0.0, seed + 2).unwrap(), t)
}

fn rel_err_sq(f: &CPFactors, t: &maxqnorm::DenseTensor) -> f64 {
    let rec = cp_compose(f, t.shape()).unwrap();
    rec.sub(t).unwrap().frobenius().powi(2) / t.frobenius().powi(2)
}

fn assert_nonincreasing(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0], "loss went up: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn loss_examples() {
    let s = cube(3);
    let (f, t) = random_low_rank(&s, 2, FactorKind::Gaussian, 4).unwrap();
    let obs = ObservationSet::full(&t);
    assert!(loss(&f, &obs).unwrap() < 1e-28);

    let ones = ObservationSet::new(s.clone(), vec![Index(vec![1, 2, 3]), Index(vec![3, 3, 1])], vec![1.0; 2], 0.0)
        .unwrap();
    assert_eq!(loss(&CPFactors::zeros(&s, 2).unwrap(), &ones).unwrap(), 1.0);

    // Residuals scale by c when both targets and one factor scale by c.
    let mut rng = maxqnorm::seed::rng(1, &[]);
    let g = random_factors(s.dims(), 2, &mut rng);
    let base = loss(&g, &obs).unwrap();
    let mut g3 = g.clone();
    g3.scale_factor(0, 3.0);
    assert!((loss(&g3, &obs.scaled(3.0)).unwrap() - 9.0 * base).abs() < 1e-12 * base.max(1.0));

    let empty = ObservationSet::new(s.clone(), vec![], vec![], 0.0).unwrap();
    assert!(loss(&g, &empty).is_err());
}

#[test]
fn gradient_single_observation() {
    let s = Shape::new(vec![2, 3, 2]).unwrap();
    let f = CPFactors::new(vec![array![[0.5], [2.0]], array![[1.0], [-1.0], [3.0]], array![[0.25], [-2.0]]]).unwrap();
    let obs = ObservationSet::new(s.clone(), vec![Index(vec![2, 3, 1])], vec![1.0], 0.0).unwrap();
    let resid = 2.0 * 3.0 * 0.25 - 1.0;
    let g1 = loss_gradient(&f, &obs, 1).unwrap();
    assert_eq!(g1, array![[0.0], [0.0], [2.0 * resid * 2.0 * 0.25]]);
    let g0 = loss_gradient(&f, &obs, 0).unwrap();
    assert_eq!(g0, array![[0.0], [2.0 * resid * 3.0 * 0.25]]);
    assert!(loss_gradient(&f, &obs, 3).is_err());

    let exact = ObservationSet::new(s.clone(), vec![Index(vec![2, 3, 1])], vec![1.5], 0.0).unwrap();
    for j in 0..3 {
        assert!(loss_gradient(&f, &exact, j).unwrap().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = maxqnorm::seed::rng(7, &[]);
    for trial in 0..20 {
        let d = 3 + trial % 2;
        let dims: Vec<usize> = (0..d).map(|_| rng.random_range(2..=5)).collect();
        let k = rng.random_range(1..=4);
        let s = Shape::new(dims.clone()).unwrap();
        let (_, t) = random_low_rank(&s, 2, FactorKind::Gaussian, trial as u64).unwrap();
        let m = rng.random_range(5..=30);
        let idx = draw_indices(&SamplingDistribution::uniform(s.clone()), m, trial as u64).unwrap();
        let obs = observe(&t, idx, 0.1, trial as u64).unwrap();
        let f = random_factors(&dims, k, &mut rng);
        let e = random_factors(&dims, k, &mut rng);
        let h = 1e-6;
        let shift = |c: f64| {
            CPFactors::new(
                f.factors().iter().zip(e.factors()).map(|(a, b)| a + &(b * c)).collect(),
            )
            .unwrap()
        };
        let fd = (loss(&shift(h), &obs).unwrap() - loss(&shift(-h), &obs).unwrap()) / (2.0 * h);
        let an: f64 = (0..d)
            .map(|j| (loss_gradient(&f, &obs, j).unwrap() * e.factor(j)).sum())
            .sum();
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "trial {trial}: {fd} vs {an}");
    }
}

#[test]
fn params_validation() {
    assert!(SolverParams::default().validate().is_ok());
    for bad in [
        SolverParams { max_iters: 0, ..Default::default() },
        SolverParams { armijo_c: 1.0, ..Default::default() },
        SolverParams { armijo_shrink: 0.0, ..Default::default() },
        SolverParams { step_init: -1.0, ..Default::default() },
        SolverParams { tol_rel_loss: 0.0, ..Default::default() },
        SolverParams { batch_size: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let json = r#"{"method": "sgd", "batch_size": 17}"#;
    let p: SolverParams = serde_json::from_str(json).unwrap();
    assert_eq!(p.method, Method::Sgd);
    assert_eq!(p.batch_size, 17);
    assert_eq!(p.max_iters, 2000);
}

#[test]
fn initial_point_is_half_budget() {
    let s = Shape::new(vec![4, 5, 6]).unwrap();
    let b = QnormBound::budget(8.0, 3).unwrap();
    let f = initial_factors(&s, 7, &b, 3).unwrap();
    assert!((maxqnorm::norms::max_qnorm_value(&f) - 4.0).abs() < 1e-12);
    assert!(feasibility_violation(&f, &b) <= 0.0);
}

#[test]
fn pgd_recovers_rank_one_sign_tensor() {
    let s = cube(4);
    let (_, t) = random_low_rank(&s, 1, FactorKind::Sign, 11).unwrap();
    let obs = ObservationSet::full(&t);
    let b = QnormBound::budget(1.0, 3).unwrap();
    let p = SolverParams::with_method(Method::Pgd);
    let st = solve_pgd(&obs, &s, &b, 2, &p, None).unwrap();
    let rmse = st.loss.sqrt();
    assert!(rmse <= 1e-3, "rmse {rmse} after {} iterations", st.iter);
    assert_nonincreasing(&st.loss_trace);
    assert!(feasibility_violation(&st.factors, &b) <= 1e-12);
}

#[test]
fn init_at_solution_stays_put() {
    let s = cube(3);
    let (f, t) = random_low_rank(&s, 1, FactorKind::Sign, 2).unwrap();
    let obs = ObservationSet::full(&t);
    let b = QnormBound::budget(1.0, 3).unwrap();
    for method in [Method::Pgd, Method::Pqn, Method::Sgd] {
        let p = SolverParams { batch_size: 9, ..SolverParams::with_method(method) };
        let st = solve(&obs, &s, &b, 1, &p, Some(&f)).unwrap();
        assert!(st.loss < 1e-28, "{method:?}");
        for (a, b) in st.factors.factors().iter().zip(f.factors()) {
            assert!((a - b).iter().all(|x| x.abs() < 1e-14));
        }
    }
}

#[test]
fn pqn_memoryless_first_step_is_projected_gradient() {
    let s = Shape::new(vec![3, 4, 3]).unwrap();
    let (obs, _) = sampled(&s, 2, FactorKind::Gaussian, 20, 5);
    let b = QnormBound::budget(2.0, 3).unwrap();
    let init = initial_factors(&s, 3, &b, 9).unwrap();
    let base = SolverParams { max_iters: 1, step_init: 0.5, lbfgs_memory: 0, ..Default::default() };
    let pqn = solve_pqn(&obs, &s, &b, 3, &base, Some(&init)).unwrap();
    // The solver steps on V_j / R^(1/d) against targets / R, so in original
    // coordinates the step is gamma * R^(2/d - 2) * grad_j.
    let scale = 0.5 * b.per_factor().powi(2) / b.r().powi(2);
    let manual: Vec<Array2<f64>> = (0..3)
        .map(|j| {
            let g = loss_gradient(&init, &obs, j).unwrap();
            project_rows(&(init.factor(j) - &(g * scale)), b.per_factor())
        })
        .collect();
    let manual = CPFactors::new(manual).unwrap();
    assert!(loss(&manual, &obs).unwrap() < loss(&init, &obs).unwrap());
    for (a, m) in pqn.factors.factors().iter().zip(manual.factors()) {
        assert!((a - m).iter().all(|x| x.abs() < 1e-10), "{a} vs {m}");
    }
    let pgd = solve_pgd(&obs, &s, &b, 3, &SolverParams { method: Method::Pgd, ..base }, Some(&init)).unwrap();
    assert!((pgd.loss - pqn.loss).abs() < 1e-12);
}

#[test]
fn pqn_recovers_rank_three_from_ten_percent() {
    let s = cube(20);
    let (obs, t) = sampled(&s, 3, FactorKind::Sign, 800, 21);
    let b = QnormBound::new(3.0, 1.0, 3).unwrap();
    let st = solve_pqn(&obs, &s, &b, 40, &SolverParams::default(), None).unwrap();
    let err = rel_err_sq(&st.factors, &t);
    assert!(err <= 1e-2, "relative squared error {err}");
    assert_nonincreasing(&st.loss_trace);
    assert!(feasibility_violation(&st.factors, &b) <= 1e-12);
}

#[test]
fn loose_bound_interpolates_samples() {
    // With the worst-case rank bound the constraint is inactive at this
    // sample size: the fit interpolates but does not recover.
    let s = cube(20);
    let (obs, t) = sampled(&s, 3, FactorKind::Sign, 800, 21);
    let b = QnormBound::new(max_qnorm_upper_bound(3, 3, 1.0), 1.0, 3).unwrap();
    let st = solve_pqn(&obs, &s, &b, 40, &SolverParams::default(), None).unwrap();
    assert!(st.loss < 1e-20);
    assert!(rel_err_sq(&st.factors, &t) > 0.1);
}

#[test]
fn sgd_full_batch_epoch_is_one_projected_step() {
    let s = Shape::new(vec![3, 3, 4]).unwrap();
    let (obs, _) = sampled(&s, 2, FactorKind::Gaussian, 25, 8);
    let b = QnormBound::budget(2.0, 3).unwrap();
    let init = initial_factors(&s, 2, &b, 1).unwrap();
    let p = SolverParams { method: Method::Sgd, max_iters: 1, step_init: 0.3, batch_size: 25, ..Default::default() };
    let st = solve_sgd(&obs, &s, &b, 2, &p, Some(&init)).unwrap();
    let scale = 0.3 * b.per_factor().powi(2) / b.r().powi(2);
    for j in 0..3 {
        let g = loss_gradient(&init, &obs, j).unwrap();
        let expect = project_rows(&(init.factor(j) - &(g * scale)), b.per_factor());
        assert!((st.factors.factor(j) - &expect).iter().all(|x| x.abs() < 1e-12));
    }
}

#[test]
fn sgd_fits_rank_two_full_observation() {
    let s = cube(10);
    let b = QnormBound::new(2.0, 1.0, 3).unwrap();
    let p = SolverParams { method: Method::Sgd, max_iters: 200, batch_size: 10, step_init: 30.0, ..Default::default() };
    for kind in [FactorKind::Gaussian, FactorKind::Sign] {
        let (_, t) = random_low_rank(&s, 2, kind, 3).unwrap();
        let obs = ObservationSet::full(&t);
        let st = solve_sgd(&obs, &s, &b, 20, &p, None).unwrap();
        assert!(st.loss <= 1e-4, "{kind:?}: loss {} after {} epochs", st.loss, st.iter);
        assert!(feasibility_violation(&st.factors, &b) <= 1e-12);
    }
}

#[test]
fn sgd_early_epochs_decrease() {
    let s = cube(6);
    let (_, t) = random_low_rank(&s, 1, FactorKind::Gaussian, 5).unwrap();
    let obs = ObservationSet::full(&t);
    let b = QnormBound::budget(2.0, 3).unwrap();
    let p = SolverParams { method: Method::Sgd, max_iters: 10, batch_size: 24, ..Default::default() };
    let st = solve_sgd(&obs, &s, &b, 6, &p, None).unwrap();
    assert!(st.loss_trace.len() >= 2);
    assert!(st.loss_trace.last().unwrap() < &st.loss_trace[0]);
    let a = solve_sgd(&obs, &s, &b, 6, &p, None).unwrap();
    assert_eq!(a.loss_trace, st.loss_trace);
}

#[test]
fn sgd_rejects_oversized_batch() {
    let s = cube(3);
    let (obs, _) = sampled(&s, 1, FactorKind::Sign, 5, 1);
    let b = QnormBound::budget(1.0, 3).unwrap();
    let p = SolverParams { method: Method::Sgd, batch_size: 6, ..Default::default() };
    assert!(solve_sgd(&obs, &s, &b, 2, &p, None).is_err());
}

#[test]
fn solvers_are_feasible_and_monotone() {
    let s = Shape::new(vec![5, 6, 4]).unwrap();
    let (obs, _) = sampled(&s, 3, FactorKind::Gaussian, 60, 13);
    let b = QnormBound::new(1.5, 1.0, 3).unwrap();
    for method in [Method::Pgd, Method::Pqn, Method::Sgd] {
        let p = SolverParams { max_iters: 200, batch_size: 10, ..SolverParams::with_method(method) };
        let st = solve(&obs, &s, &b, 12, &p, None).unwrap();
        for f in st.factors.factors() {
            assert!(two_inf_norm(f.view()).unwrap() <= b.per_factor() + 1e-12);
        }
        if method != Method::Sgd {
            assert_nonincreasing(&st.loss_trace);
        }
        assert_eq!(st.loss_trace.len(), st.iter + 1);
    }
}

#[test]
fn scale_equivariance() {
    let s = Shape::new(vec![4, 4, 5]).unwrap();
    let (obs, _) = sampled(&s, 2, FactorKind::Gaussian, 40, 2);
    let c: f64 = 8.0;
    let b1 = QnormBound::new(3.0, 1.0, 3).unwrap();
    let bc = QnormBound::new(3.0 * c, c, 3).unwrap();
    for method in [Method::Pgd, Method::Pqn, Method::Sgd] {
        let p = SolverParams { max_iters: 50, batch_size: 8, ..SolverParams::with_method(method) };
        let a = solve(&obs, &s, &b1, 8, &p, None).unwrap();
        let z = solve(&obs.scaled(c), &s, &bc, 8, &p, None).unwrap();
        let ra = cp_compose(&a.factors, &s).unwrap();
        let rz = cp_compose(&z.factors, &s).unwrap();
        let diff = rz.sub(&ra.scaled(c)).unwrap().frobenius();
        assert!(diff <= 1e-9 * rz.frobenius(), "{method:?}: {diff}");
    }
}
