use rand::seq::SliceRandom;

use super::objective::{project_row, Problem};
use super::{Run, SolverParams, StallCounter};
use crate::seed;

pub(super) fn run(problem: &Problem, mut w: Vec<f64>, params: &SolverParams) -> Run {
    let k = problem.width();
    let d = problem.order();
    let m = problem.m();
    let mut rng = seed::rng(params.seed, &[seed::tag("sgd")]);
    let mut order: Vec<usize> = (0..m).collect();
    let mut grad = vec![0.0; w.len()];
    let mut touched = vec![false; problem.total_rows()];
    let mut rows = Vec::new();
    let mut f = problem.loss(&w);
    let mut trace = vec![f];
    let mut stall = StallCounter::new(params.tol_rel_loss);
    let mut t = 0usize;
    let mut epoch = 0;
    while epoch < params.max_iters && f > params.target_loss {
        epoch += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            t += 1;
            let gamma = params.step_init / (t as f64).sqrt();
            problem.batch_loss_grad(&w, batch, &mut grad);
            rows.clear();
            for &slot in batch {
                for j in 0..d {
                    let r = problem.stacked_row(slot, j);
                    if !touched[r] {
                        touched[r] = true;
                        rows.push(r);
                    }
                }
            }
            for &r in &rows {
                let span = r * k..(r + 1) * k;
                for (x, g) in w[span.clone()].iter_mut().zip(&mut grad[span.clone()]) {
                    *x -= gamma * *g;
                    *g = 0.0;
                }
                project_row(&mut w[span], 1.0);
                touched[r] = false;
            }
        }
        let before = f;
        f = problem.loss(&w);
        trace.push(f);
        if stall.update(before, f) {
            break;
        }
    }
    Run {
        w,
        loss: f,
        iter: epoch,
        trace,
    }
}

