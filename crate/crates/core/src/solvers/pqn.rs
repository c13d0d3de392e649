use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::objective::{dot, project_all, Problem};
use super::{Run, SolverParams, StallCounter};

/// Limited-memory BFGS approximation in compact form,
/// `B = sigma I - W M^-1 W'` with `W = [sigma S, Y]`.
struct Lbfgs {
    memory: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    /// Scale used while no pairs are stored.
    base_sigma: f64,
    sigma: f64,
    /// `M^-1`, `2p x 2p`.
    m_inv: DMatrix<f64>,
}

impl Lbfgs {
    fn new(memory: usize, base_sigma: f64) -> Self {
        Self {
            memory,
            s: VecDeque::new(),
            y: VecDeque::new(),
            base_sigma,
            sigma: base_sigma,
            m_inv: DMatrix::zeros(0, 0),
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.sigma = self.base_sigma;
        self.m_inv = DMatrix::zeros(0, 0);
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.memory == 0 {
            return;
        }
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        let ss = dot(&s, &s);
        // Skip pairs that would break positive definiteness.
        if !(sy > 1e-10 * (ss * yy).sqrt()) || !sy.is_finite() {
            return;
        }
        if self.s.len() == self.memory {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.sigma = yy / sy;
        if !self.rebuild() {
            self.clear();
        }
    }

    fn rebuild(&mut self) -> bool {
        let p = self.s.len();
        let mut m = DMatrix::zeros(2 * p, 2 * p);
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = self.sigma * dot(&self.s[i], &self.s[j]);
                if i > j {
                    let l = dot(&self.s[i], &self.y[j]);
                    m[(i, p + j)] = l;
                    m[(p + j, i)] = l;
                }
            }
            m[(p + i, p + i)] = -dot(&self.s[i], &self.y[i]);
        }
        match m.try_inverse() {
            Some(inv) if inv.iter().all(|x| x.is_finite()) => {
                self.m_inv = inv;
                true
            }
            _ => false,
        }
    }

    /// `out = B v`.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(v) {
            *o = self.sigma * x;
        }
        let p = self.s.len();
        if p == 0 {
            return;
        }
        let mut wtv = DVector::zeros(2 * p);
        for i in 0..p {
            wtv[i] = self.sigma * dot(&self.s[i], v);
            wtv[p + i] = dot(&self.y[i], v);
        }
        let c = &self.m_inv * wtv;
        for i in 0..p {
            let (a, b) = (self.sigma * c[i], c[p + i]);
            for ((o, si), yi) in out.iter_mut().zip(&self.s[i]).zip(&self.y[i]) {
                *o -= a * si + b * yi;
            }
        }
    }
}

/// Approximately minimizes `g'(z - x) + 1/2 (z - x)' B (z - x)` over the
/// feasible set with spectral projected gradient and a non-monotone Armijo
/// rule. Returns the final `z`, which is feasible.
fn spg_subproblem(x: &[f64], g: &[f64], model: &Lbfgs, k: usize, params: &SolverParams) -> Vec<f64> {
    let n = x.len();
    let mut z = x.to_vec();
    // B (z - x) and the model gradient g + B (z - x).
    let mut ba = vec![0.0; n];
    let mut qgrad = g.to_vec();
    let mut q = 0.0;
    let mut history: VecDeque<f64> = VecDeque::from([q]);
    let mut alpha = 1.0 / model.sigma;
    let mut dir = vec![0.0; n];
    let mut bd = vec![0.0; n];
    for _ in 0..params.spg_iters {
        for ((d, zi), gi) in dir.iter_mut().zip(&z).zip(&qgrad) {
            *d = zi - alpha * gi;
        }
        project_all(&mut dir, k, 1.0);
        let mut dmax = 0.0f64;
        for (d, zi) in dir.iter_mut().zip(&z) {
            *d -= zi;
            dmax = dmax.max(d.abs());
        }
        if dmax < 1e-15 {
            break;
        }
        // The model is quadratic, so along `dir` it is
        // q + t gtd + t^2 dbd / 2.
        model.apply(&dir, &mut bd);
        let gtd = dot(&qgrad, &dir);
        let dbd = dot(&dir, &bd);
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            if q + t * gtd + 0.5 * t * t * dbd <= reference + params.armijo_c * t * gtd {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        q += t * gtd + 0.5 * t * t * dbd;
        for i in 0..n {
            z[i] += t * dir[i];
            ba[i] += t * bd[i];
            qgrad[i] = g[i] + ba[i];
        }
        history.push_back(q);
        if history.len() > params.nonmonotone_window {
            history.pop_front();
        }
        alpha = if dbd > 0.0 {
            (dot(&dir, &dir) / dbd).clamp(1e-10, 1e10)
        } else {
            1.0 / model.sigma
        };
    }
    z
}

pub(super) fn run(problem: &Problem, mut w: Vec<f64>, params: &SolverParams) -> Run {
    let k = problem.width();
    let n = w.len();
    let mut g = vec![0.0; n];
    let mut f = problem.loss_grad(&w, &mut g);
    let mut trace = vec![f];
    let mut stall = StallCounter::new(params.tol_rel_loss);
    let mut model = Lbfgs::new(params.lbfgs_memory, 1.0 / params.step_init);
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iter = 0;
    while iter < params.max_iters && f > params.target_loss {
        let mut accepted = false;
        // Retry once from a memoryless model if the quasi-Newton direction
        // fails to make progress.
        for _ in 0..2 {
            let y = spg_subproblem(&w, &g, &model, k, params);
            let dir: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a - b).collect();
            let gtd = dot(&g, &dir);
            if gtd < 0.0 {
                let mut t = 1.0;
                for _ in 0..60 {
                    for ((tr, x), d) in trial.iter_mut().zip(&w).zip(&dir) {
                        *tr = x + t * d;
                    }
                    let f_new = problem.loss(&trial);
                    if f_new <= f + params.armijo_c * t * gtd {
                        accepted = true;
                        break;
                    }
                    t *= params.armijo_shrink;
                }
            }
            if accepted || model.is_empty() {
                break;
            }
            model.clear();
        }
        if !accepted {
            break;
        }
        iter += 1;
        let before = f;
        f = problem.loss_grad(&trial, &mut g_new);
        let s: Vec<f64> = trial.iter().zip(&w).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        model.push(s, yv);
        std::mem::swap(&mut w, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        trace.push(f);
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
