use super::objective::{dot, project_all, Problem};
use super::{Run, SolverParams, StallCounter};

pub(super) fn run(problem: &Problem, mut w: Vec<f64>, params: &SolverParams) -> Run {
    let k = problem.width();
    let mut g = vec![0.0; w.len()];
    let mut f = problem.loss_grad(&w, &mut g);
    let mut trace = vec![f];
    let mut stall = StallCounter::new(params.tol_rel_loss);
    let mut step = params.step_init;
    let mut trial = vec![0.0; w.len()];
    let mut diff = vec![0.0; w.len()];
    let mut iter = 0;
    while iter < params.max_iters && f > params.target_loss {
        let mut accepted = false;
        // Backtrack until the projected step satisfies Armijo or the step
        // underflows, in which case the iterate is stationary to precision.
        for _ in 0..60 {
            for ((t, x), gi) in trial.iter_mut().zip(&w).zip(&g) {
                *t = x - step * gi;
            }
            project_all(&mut trial, k, 1.0);
            for ((d, t), x) in diff.iter_mut().zip(&trial).zip(&w) {
                *d = t - x;
            }
            let f_new = problem.loss(&trial);
            if f_new <= f + params.armijo_c * dot(&g, &diff) {
                accepted = true;
                break;
            }
            step *= params.armijo_shrink;
        }
        if !accepted {
            break;
        }
        iter += 1;
        std::mem::swap(&mut w, &mut trial);
        let before = f;
        f = problem.loss_grad(&w, &mut g);
        trace.push(f);
        step = (step / params.armijo_shrink).min(1e8);
        if stall.update(before, f) {
            break;
        }
    }
    Run {
        w,
        loss: f,
        iter,
        trace,
    }
}
