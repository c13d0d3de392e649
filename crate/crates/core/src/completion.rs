//! Bisection estimate of the max-qnorm and cross-validated completion.

use crate::error::{Error, Result};
use crate::norms::QnormBound;
use crate::observation::{split_slots, ObservationSet};
use crate::par;
use crate::seed;
use crate::solvers::{self, feasibility_violation, SolverParams, SolverState};
use crate::tensor::{balanced_position, cp_compose, CPFactors, DenseTensor, Shape};

/// RMSE at or below which a full-observation solve counts as a recovery.
pub const RECOVERY_RMSE: f64 = 1e-3;

/// Fraction of observations used for training in the five-point search.
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("rmse of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty lists".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// `||rec - truth||_F^2 / ||truth||_F^2`.
pub fn relative_error_sq(recovered: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    let num = recovered.sub(truth)?.frobenius().powi(2);
    let den = truth.frobenius().powi(2);
    if den == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero tensor".into()));
    }
    Ok(num / den)
}

/// Factor width used when none is given: twice the largest dimension.
pub fn default_width(shape: &Shape) -> usize {
    2 * shape.dims().iter().copied().max().unwrap_or(1)
}

/// Number of interval-halving steps for a search over `[lower, upper]`,
/// never fewer than one.
pub fn search_iterations(lower: f64, upper: f64) -> usize {
    let raw = (upper - lower).log2().ceil() + 6.0;
    if raw.is_finite() && raw > 1.0 {
        raw as usize
    } else {
        1
    }
}

fn check_interval(lower: f64, upper: f64) -> Result<()> {
    if !(lower > 0.0 && lower.is_finite() && upper.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bounds must be positive and finite (got {lower}, {upper})"
        )));
    }
    if lower > upper {
        return Err(Error::InvalidArgument(format!("lower bound {lower} exceeds upper bound {upper}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct QnormEstimate {
    pub value: f64,
    /// Width of the final bisection interval, `(upper - lower) / 2^iterations`.
    pub resolution: f64,
    pub iterations: usize,
    /// `(mid, recovered)` for every bisection step, in original units.
    pub trace: Vec<(f64, bool)>,
    /// Largest factor 2,inf-norm excess over the bound across all solves,
    /// in unit-peak coordinates.
    pub max_violation: f64,
}

/// Bisection on the bound `R` of a fully observed completion problem: the
/// smallest `R` at which the constrained fit reaches RMSE `1e-3` estimates
/// the max-qnorm of `tensor`.
///
/// The tensor is rescaled to unit infinity norm first so the RMSE threshold
/// means the same thing for every input; bounds and the returned value are
/// in the caller's units. Each solve starts from the previous one's factors.
pub fn estimate_max_qnorm(
    tensor: &DenseTensor,
    lower: f64,
    upper: f64,
    solver: &SolverParams,
) -> Result<QnormEstimate> {
    estimate_max_qnorm_with_width(tensor, lower, upper, solver, default_width(tensor.shape()))
}

pub fn estimate_max_qnorm_with_width(
    tensor: &DenseTensor,
    lower: f64,
    upper: f64,
    solver: &SolverParams,
    width: usize,
) -> Result<QnormEstimate> {
    check_interval(lower, upper)?;
    if lower == upper {
        return Err(Error::InvalidArgument("bisection needs lower < upper".into()));
    }
    solver.validate()?;
    let iterations = search_iterations(lower, upper);
    let resolution = (upper - lower) / 2f64.powi(iterations as i32);
    let peak = tensor.infinity_norm();
    if peak == 0.0 {
        // Every bound recovers the zero tensor.
        return Ok(QnormEstimate {
            value: lower,
            resolution,
            iterations: 0,
            trace: Vec::new(),
            max_violation: f64::NEG_INFINITY,
        });
    }
    let unit = tensor.scaled(1.0 / peak);
    let obs = ObservationSet::full(&unit);
    let shape = unit.shape();
    let params = SolverParams {
        target_loss: solver.target_loss.max(RECOVERY_RMSE * RECOVERY_RMSE),
        ..solver.clone()
    };
    let (mut lo, mut hi) = (lower / peak, upper / peak);
    let mut warm: Option<CPFactors> = None;
    let mut trace = Vec::with_capacity(iterations);
    let mut max_violation = f64::NEG_INFINITY;
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let bound = QnormBound::budget(mid, shape.order())?;
        let recovered = match solvers::solve(&obs, shape, &bound, width, &params, warm.as_ref()) {
            Ok(state) => {
                let ok = state.loss.sqrt() <= RECOVERY_RMSE;
                max_violation = max_violation.max(feasibility_violation(&state.factors, &bound));
                warm = Some(state.factors);
                ok
            }
            Err(_) => false,
        };
        trace.push((mid * peak, recovered));
        if recovered {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(QnormEstimate {
        value: 0.5 * (lo + hi) * peak,
        resolution,
        iterations,
        trace,
        max_violation,
    })
}

/// Settings of the five-point search beyond the solver itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub train_fraction: f64,
    /// Factor width; `None` means [`default_width`].
    pub width: Option<usize>,
    /// Seeds the train/validation split and the candidate initializations.
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            train_fraction: TRAIN_FRACTION,
            width: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverSummary {
    pub loss: f64,
    pub iter: usize,
    /// Solver iterations summed over every candidate solve.
    pub total_iters: usize,
    pub solves: usize,
    /// Largest factor 2,inf-norm excess over the candidate bound across
    /// every solve.
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub recovered: DenseTensor,
    /// Factors of the returned fit, in the shape the solver worked on (the
    /// unfolded matrix for [`matricized_baseline`]).
    pub factors: CPFactors,
    pub chosen_r: f64,
    pub validation_rmse: f64,
    pub relative_error: Option<f64>,
    pub solver: SolverSummary,
    /// Interval searched at each outer iteration.
    pub bounds_trace: Vec<(f64, f64)>,
}

impl CompletionResult {
    /// Records `||recovered - truth||_F^2 / ||truth||_F^2`.
    pub fn score(&mut self, truth: &DenseTensor) -> Result<f64> {
        let e = relative_error_sq(&self.recovered, truth)?;
        self.relative_error = Some(e);
        Ok(e)
    }
}

/// Completion with a five-point search over the bound `R`, each candidate
/// scored by RMSE on held-out observations. Solves use `solver.method`.
pub fn complete_with_cv(
    obs: &ObservationSet,
    shape: &Shape,
    lower: f64,
    upper: f64,
    solver: &SolverParams,
    alpha: f64,
    options: &CvOptions,
) -> Result<CompletionResult> {
    solver.validate()?;
    let width = options.width.unwrap_or_else(|| default_width(shape));
    complete_with_cv_using(obs, shape, lower, upper, alpha, options, |train, bound, init, slot| {
        let params = SolverParams {
            seed: seed::derive(options.seed, &[seed::tag("candidate"), slot]),
            ..solver.clone()
        };
        solvers::solve(train, shape, bound, width, &params, init)
    })
}

/// [`complete_with_cv`] with a caller-supplied solver. `solve` receives the
/// training observations, the candidate bound, a warm start, and the
/// candidate's position (`round * 5 + i`).
pub fn complete_with_cv_using<F>(
    obs: &ObservationSet,
    shape: &Shape,
    lower: f64,
    upper: f64,
    alpha: f64,
    options: &CvOptions,
    solve: F,
) -> Result<CompletionResult>
where
    F: Fn(&ObservationSet, &QnormBound, Option<&CPFactors>, u64) -> Result<SolverState> + Sync,
{
    check_interval(lower, upper)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if obs.shape() != shape {
        return Err(Error::Dimension("observation shape differs from target shape".into()));
    }
    if obs.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "cross validation needs at least 5 observations, got {}",
            obs.len()
        )));
    }
    let (train_slots, validate_slots) =
        split_slots(obs.len(), options.train_fraction, seed::derive(options.seed, &[seed::tag("split")]))?;
    let train = obs.subset(&train_slots);
    let validate = obs.subset(&validate_slots);
    let d = shape.order();

    let score = |state: &SolverState| -> f64 {
        let pred: Vec<f64> = validate
            .indices()
            .iter()
            .map(|ix| {
                let zero: Vec<usize> = ix.coords().iter().map(|c| c - 1).collect();
                state.factors.entry(&zero)
            })
            .collect();
        rmse(&pred, validate.values()).unwrap_or(f64::INFINITY)
    };
    let bound_for = |r: f64| QnormBound::new(r, alpha.min(r), d);

    let finish = |state: SolverState,
                  r: f64,
                  rmse: f64,
                  trace: Vec<(f64, f64)>,
                  total: usize,
                  solves: usize,
                  max_violation: f64| {
        Ok(CompletionResult {
            recovered: cp_compose(&state.factors, shape)?,
            chosen_r: r,
            validation_rmse: rmse,
            relative_error: None,
            solver: SolverSummary {
                loss: state.loss,
                iter: state.iter,
                total_iters: total,
                solves,
                max_violation,
            },
            factors: state.factors,
            bounds_trace: trace,
        })
    };

    if lower == upper {
        let bound = bound_for(lower)?;
        let state = solve(&train, &bound, None, 0)?;
        let s = score(&state);
        let iters = state.iter;
        let v = feasibility_violation(&state.factors, &bound);
        return finish(state, lower, s, vec![(lower, upper)], iters, 1, v);
    }

    let rounds = search_iterations(lower, upper);
    let (mut lo, mut hi) = (lower, upper);
    let mut warm: Option<CPFactors> = None;
    let mut trace = Vec::with_capacity(rounds);
    let mut total = 0;
    let mut best = None;
    let mut max_violation = f64::NEG_INFINITY;
    for round in 0..rounds {
        trace.push((lo, hi));
        let candidates: Vec<f64> = (0..5)
            .map(|i| (i as f64 / 4.0) * hi + ((4 - i) as f64 / 4.0) * lo)
            .collect();
        let outcomes = par::map_range(5, |i| -> Option<(SolverState, f64, f64)> {
            let bound = bound_for(candidates[i]).ok()?;
            let state = solve(&train, &bound, warm.as_ref(), (round * 5 + i) as u64).ok()?;
            let s = score(&state);
            let v = feasibility_violation(&state.factors, &bound);
            Some((state, s, v))
        });
        let scores: Vec<f64> = outcomes
            .iter()
            .map(|o| o.as_ref().map_or(f64::INFINITY, |(st, s, v)| {
                total += st.iter;
                max_violation = max_violation.max(*v);
                if s.is_nan() { f64::INFINITY } else { *s }
            }))
            .collect();
        // First minimum wins, so ties go to the smaller bound.
        let min_index = (0..5).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
        if outcomes[min_index].is_none() {
            return Err(Error::InvalidArgument(format!(
                "every candidate solve failed in round {round}"
            )));
        }
        let (state, s, _) = outcomes.into_iter().nth(min_index).flatten().expect("chosen candidate");
        lo = candidates[min_index.saturating_sub(1)];
        hi = candidates[(min_index + 1).min(4)];
        warm = Some(state.factors.clone());
        best = Some((state, candidates[min_index], s));
    }
    let (state, r, s) = best.expect("at least one round");
    finish(state, r, s, trace, total, rounds * 5, max_violation)
}

/// Completion of the balanced unfolding `X_[split]` as a matrix problem,
/// folded back to the tensor shape.
pub fn matricized_baseline(
    obs: &ObservationSet,
    shape: &Shape,
    split: usize,
    lower: f64,
    upper: f64,
    solver: &SolverParams,
    alpha: f64,
    options: &CvOptions,
) -> Result<CompletionResult> {
    let d = shape.order();
    if d == 2 && split == 1 {
        return complete_with_cv(obs, shape, lower, upper, solver, alpha, options);
    }
    if split == 0 || split >= d {
        return Err(Error::Dimension(format!("split {split} out of range 1..{d}")));
    }
    if obs.shape() != shape {
        return Err(Error::Dimension("observation shape differs from target shape".into()));
    }
    let dims = shape.dims();
    let rows: usize = dims[..split].iter().product();
    let cols: usize = dims[split..].iter().product();
    let mshape = Shape::new(vec![rows, cols])?;
    let mobs = obs.remap(mshape.clone(), |c| {
        let (r, col) = balanced_position(dims, split, c);
        vec![r, col]
    })?;
    let mut matrix_opts = options.clone();
    if matrix_opts.width.is_none() {
        // Any rows x cols matrix has rank at most min(rows, cols).
        matrix_opts.width = Some(2 * rows.min(cols));
    }
    let mut result = complete_with_cv(&mobs, &mshape, lower, upper, solver, alpha, &matrix_opts)?;
    let m = &result.recovered;
    result.recovered = DenseTensor::from_fn(shape.clone(), |c| {
        let (r, col) = balanced_position(dims, split, c);
        m.at(&[r, col])
    })?;
    Ok(result)
}
