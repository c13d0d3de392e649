//! First-order solvers for
//!
//! ```text
//! min (1/m) sum_t (X(w_t) - Y_t)^2   s.t.   X = V_1 o ... o V_d,
//!                                           max_j ||V_j||_{2,inf} <= R^(1/d)
//! ```
//!
//! Three methods share one objective kernel: projected gradient with Armijo
//! backtracking ([`solve_pgd`]), projected quasi-Newton with an L-BFGS model
//! minimized by spectral projected gradient ([`solve_pqn`]), and stochastic
//! projected gradient ([`solve_sgd`]).
//!
//! Internally every solver works on the normalized problem
//! `W_j = V_j / R^(1/d)`, targets `Y / R`, where the feasible set is the
//! product of unit row balls. The normalized problem is invariant under
//! jointly scaling the data and the budget, so step sizes and stopping rules
//! mean the same thing at every `R`.

mod objective;
mod pgd;
mod pqn;
mod sgd;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{two_inf_norm, QnormBound};
use crate::observation::ObservationSet;
use crate::seed;
use crate::tensor::{CPFactors, Shape};

pub(crate) use objective::Problem;

/// Consecutive iterations of small relative decrease before stopping.
pub const STALL_ITERS: usize = 5;

/// Largest tensor order the objective kernel supports.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pgd,
    Pqn,
    Sgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pgd => "pgd",
            Method::Pqn => "pqn",
            Method::Sgd => "sgd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(Self::Pgd),
            "pqn" => Ok(Self::Pqn),
            "sgd" => Ok(Self::Sgd),
            _ => Err(Error::Parse(format!("unknown solver {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub method: Method,
    /// Iterations for pgd/pqn, epochs for sgd.
    pub max_iters: usize,
    /// Initial step `gamma` in normalized coordinates.
    pub step_init: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub tol_rel_loss: f64,
    /// Stop as soon as the loss drops to this value (0 disables).
    pub target_loss: f64,
    pub batch_size: usize,
    pub lbfgs_memory: usize,
    /// Inner spectral projected gradient iterations per pqn step.
    pub spg_iters: usize,
    /// Width of the non-monotone window in the inner SPG line search.
    pub nonmonotone_window: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            method: Method::Pqn,
            max_iters: 2000,
            step_init: 1.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            tol_rel_loss: 1e-9,
            target_loss: 0.0,
            batch_size: 256,
            lbfgs_memory: 10,
            spg_iters: 10,
            nonmonotone_window: 10,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver parameter {what}")));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return bad("step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0, 1)");
        }
        if !(self.tol_rel_loss > 0.0) {
            return bad("tol_rel_loss must be positive");
        }
        if !(self.target_loss >= 0.0) {
            return bad("target_loss must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.spg_iters == 0 || self.nonmonotone_window == 0 {
            return bad("spg_iters and nonmonotone_window must be positive");
        }
        Ok(())
    }
}

/// Final iterate and diagnostics of one solver run.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Always feasible for the bound the solver was run with.
    pub factors: CPFactors,
    pub loss: f64,
    pub iter: usize,
    /// Loss after each accepted iteration (epoch for sgd), starting with the
    /// initial loss.
    pub loss_trace: Vec<f64>,
}

/// Mean squared residual of the composed factors over the observation
/// slots. Only observed entries are composed.
pub fn loss(factors: &CPFactors, obs: &ObservationSet) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty observation set".into()));
    }
    factors.check_shape(obs.shape())?;
    check_order(obs.shape())?;
    let problem = Problem::new(obs, factors.width(), 1.0);
    Ok(problem.loss(&stack(factors, 1.0)))
}

/// Gradient of [`loss`] with respect to factor `mode` (0-based).
pub fn loss_gradient(factors: &CPFactors, obs: &ObservationSet, mode: usize) -> Result<Array2<f64>> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("gradient of an empty observation set".into()));
    }
    factors.check_shape(obs.shape())?;
    check_order(obs.shape())?;
    if mode >= factors.order() {
        return Err(Error::Dimension(format!("mode {mode} out of range")));
    }
    let problem = Problem::new(obs, factors.width(), 1.0);
    let w = stack(factors, 1.0);
    let mut g = vec![0.0; w.len()];
    problem.loss_grad(&w, &mut g);
    let k = factors.width();
    let lo = problem.row_offset(mode) * k;
    let n = obs.shape().dims()[mode];
    Ok(Array2::from_shape_vec((n, k), g[lo..lo + n * k].to_vec()).expect("block shape"))
}

/// Random start: i.i.d. normal entries with each factor scaled so its
/// 2,inf-norm is `(R/2)^(1/d)`, i.e. a feasible point at half the budget.
pub fn initial_factors(shape: &Shape, k: usize, bound: &QnormBound, seed: u64) -> Result<CPFactors> {
    if k == 0 {
        return Err(Error::InvalidArgument("factor width must be positive".into()));
    }
    let mut rng = seed::rng(seed, &[seed::tag("initial_factors")]);
    let target = (bound.r() / 2.0).powf(1.0 / shape.order() as f64);
    let factors = shape
        .dims()
        .iter()
        .map(|&n| {
            let mut f = Array2::from_shape_simple_fn((n, k), || rng.sample::<f64, _>(StandardNormal));
            let norm = two_inf_norm(f.view()).expect("nonempty");
            f *= target / norm;
            f
        })
        .collect();
    CPFactors::new(factors)
}

/// Largest amount by which a factor's 2,inf-norm exceeds the per-factor
/// bound (zero or negative when feasible).
pub fn feasibility_violation(factors: &CPFactors, bound: &QnormBound) -> f64 {
    factors
        .factors()
        .iter()
        .map(|f| two_inf_norm(f.view()).expect("nonempty") - bound.per_factor())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Dispatches on `params.method`.
pub fn solve(
    obs: &ObservationSet,
    shape: &Shape,
    bound: &QnormBound,
    k: usize,
    params: &SolverParams,
    init: Option<&CPFactors>,
) -> Result<SolverState> {
    match params.method {
        Method::Pgd => solve_pgd(obs, shape, bound, k, params, init),
        Method::Pqn => solve_pqn(obs, shape, bound, k, params, init),
        Method::Sgd => solve_sgd(obs, shape, bound, k, params, init),
    }
}

/// Projected gradient: all factors step simultaneously along their partial
/// gradients, rows are projected back onto the bound, and the step is
/// backtracked until the Armijo condition holds.
pub fn solve_pgd(
    obs: &ObservationSet,
    shape: &Shape,
    bound: &QnormBound,
    k: usize,
    params: &SolverParams,
    init: Option<&CPFactors>,
) -> Result<SolverState> {
    let mut setup = Setup::new(obs, shape, bound, k, params, init)?;
    let params = setup.normalized(params);
    let run = pgd::run(&setup.problem, std::mem::take(&mut setup.w0), &params);
    Ok(setup.finish(run))
}

/// Projected quasi-Newton over the stacked factors. Each step minimizes an
/// L-BFGS quadratic model over the feasible set with a few spectral
/// projected gradient iterations, then backtracks along the resulting
/// feasible direction.
pub fn solve_pqn(
    obs: &ObservationSet,
    shape: &Shape,
    bound: &QnormBound,
    k: usize,
    params: &SolverParams,
    init: Option<&CPFactors>,
) -> Result<SolverState> {
    let mut setup = Setup::new(obs, shape, bound, k, params, init)?;
    let params = setup.normalized(params);
    let run = pqn::run(&setup.problem, std::mem::take(&mut setup.w0), &params);
    Ok(setup.finish(run))
}

/// Stochastic projected gradient over mini-batches drawn without
/// replacement within each epoch, with step `step_init / sqrt(t)`. Only rows
/// touched by the batch are updated and projected.
pub fn solve_sgd(
    obs: &ObservationSet,
    shape: &Shape,
    bound: &QnormBound,
    k: usize,
    params: &SolverParams,
    init: Option<&CPFactors>,
) -> Result<SolverState> {
    if params.batch_size > obs.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds {} observations",
            params.batch_size,
            obs.len()
        )));
    }
    let mut setup = Setup::new(obs, shape, bound, k, params, init)?;
    let params = setup.normalized(params);
    let run = sgd::run(&setup.problem, std::mem::take(&mut setup.w0), &params);
    Ok(setup.finish(run))
}

/// Output of a normalized-coordinate run.
pub(crate) struct Run {
    pub w: Vec<f64>,
    pub loss: f64,
    pub iter: usize,
    pub trace: Vec<f64>,
}

struct Setup {
    problem: Problem,
    w0: Vec<f64>,
    dims: Vec<usize>,
    k: usize,
    r: f64,
    rho: f64,
}

impl Setup {
    fn new(
        obs: &ObservationSet,
        shape: &Shape,
        bound: &QnormBound,
        k: usize,
        params: &SolverParams,
        init: Option<&CPFactors>,
    ) -> Result<Self> {
        params.validate()?;
        if obs.is_empty() {
            return Err(Error::InvalidArgument("no observations to fit".into()));
        }
        if obs.shape() != shape {
            return Err(Error::Dimension("observation shape differs from target shape".into()));
        }
        check_order(shape)?;
        let start = match init {
            Some(f) => {
                f.check_shape(shape)?;
                if f.width() != k {
                    return Err(Error::Dimension(format!(
                        "initial factors have width {}, expected {k}",
                        f.width()
                    )));
                }
                f.clone()
            }
            None => initial_factors(shape, k, bound, params.seed)?,
        };
        let rho = bound.per_factor();
        let mut w0 = stack(&start, rho);
        objective::project_all(&mut w0, k, 1.0);
        Ok(Self {
            problem: Problem::new(obs, k, bound.r()),
            w0,
            dims: shape.dims().to_vec(),
            k,
            r: bound.r(),
            rho,
        })
    }

    /// `params` with the loss target expressed in normalized units.
    fn normalized(&self, params: &SolverParams) -> SolverParams {
        SolverParams {
            target_loss: params.target_loss / (self.r * self.r),
            ..params.clone()
        }
    }

    fn finish(self, run: Run) -> SolverState {
        let r2 = self.r * self.r;
        let mut w = run.w;
        // Guard against rounding pushing a row a hair outside the unit ball.
        objective::project_all(&mut w, self.k, 1.0);
        SolverState {
            factors: unstack(&w, &self.dims, self.k, self.rho),
            loss: run.loss * r2,
            iter: run.iter,
            loss_trace: run.trace.into_iter().map(|l| l * r2).collect(),
        }
    }
}

fn check_order(shape: &Shape) -> Result<()> {
    if shape.order() > MAX_ORDER {
        return Err(Error::Dimension(format!(
            "order {} exceeds the supported maximum {MAX_ORDER}",
            shape.order()
        )));
    }
    Ok(())
}

/// Stacks factors into one row-major buffer, dividing by `scale`.
pub(crate) fn stack(factors: &CPFactors, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(factors.dims().iter().sum::<usize>() * factors.width());
    for f in factors.factors() {
        out.extend(f.iter().map(|x| x / scale));
    }
    out
}

pub(crate) fn unstack(w: &[f64], dims: &[usize], k: usize, scale: f64) -> CPFactors {
    let mut pos = 0;
    let factors = dims
        .iter()
        .map(|&n| {
            let block = w[pos..pos + n * k].iter().map(|x| x * scale).collect();
            pos += n * k;
            Array2::from_shape_vec((n, k), block).expect("block shape")
        })
        .collect();
    CPFactors::new(factors).expect("consistent widths")
}

/// Tracks the small-relative-decrease stopping rule.
pub(crate) struct StallCounter {
    tol: f64,
    streak: usize,
}

impl StallCounter {
    pub fn new(tol: f64) -> Self {
        Self { tol, streak: 0 }
    }

    /// Records a step from `before` to `after`; returns true once the rule
    /// has fired.
    pub fn update(&mut self, before: f64, after: f64) -> bool {
        let rel = if before > 0.0 { (before - after) / before } else { 0.0 };
        if rel < self.tol {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.streak >= STALL_ITERS
    }
}
