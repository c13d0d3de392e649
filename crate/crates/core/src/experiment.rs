//! Synthetic experiment grids: recovery error over (rank, sample rate,
//! method, trial) and max-qnorm estimates of random low-rank tensors.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::completion::{complete_with_cv, estimate_max_qnorm, matricized_baseline, CvOptions};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::norms::{max_qnorm_upper_bound, max_qnorm_value};
use crate::observation::{draw_indices, noise_level_from_db, observe, SamplingDistribution};
use crate::par;
use crate::seed;
use crate::solvers::{Method, SolverParams};
use crate::tensor::{random_low_rank, CPFactors, FactorKind, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMethod {
    MaxqPgd,
    MaxqPqn,
    MaxqSgd,
    Matricized,
}

impl GridMethod {
    pub fn name(self) -> &'static str {
        match self {
            GridMethod::MaxqPgd => "maxq_pgd",
            GridMethod::MaxqPqn => "maxq_pqn",
            GridMethod::MaxqSgd => "maxq_sgd",
            GridMethod::Matricized => "matricized",
        }
    }
}

fn default_trials() -> usize {
    15
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub sample_rates: Vec<f64>,
    /// Signal-to-noise ratio in dB; absent means noiseless.
    #[serde(default)]
    pub noise_db: Option<f64>,
    pub factor_kind: FactorKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub methods: Vec<GridMethod>,
    #[serde(default)]
    pub master_seed: u64,
    /// Entry bound of the truth (`random_low_rank` output has unit peak).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Search interval for the bound. Defaults: `alpha` and the max-qnorm
    /// bound of the largest configured rank.
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    /// Factor width; defaults to twice the largest dimension.
    #[serde(default)]
    pub width: Option<usize>,
    /// Row modes of the balanced unfolding used by `matricized`; defaults
    /// to `d / 2`.
    #[serde(default)]
    pub matricized_split: Option<usize>,
    /// Solver settings. `maxq_*` methods override `method`; `matricized`
    /// uses it as given.
    #[serde(default)]
    pub solver: SolverParams,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        let shape = Shape::new(self.shape.clone())?;
        if self.ranks.is_empty() || self.sample_rates.is_empty() || self.methods.is_empty() {
            return bad("ranks, sample_rates and methods must be nonempty");
        }
        if self.ranks.contains(&0) {
            return bad("ranks must be positive");
        }
        if self.sample_rates.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("sample rates must lie in (0, 1]");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if matches!(self.noise_db, Some(x) if !x.is_finite()) {
            return bad("noise_db must be finite");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if self.width == Some(0) {
            return bad("width must be positive");
        }
        let (lower, upper) = self.bounds();
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return bad("need 0 < lower <= upper");
        }
        if self.methods.contains(&GridMethod::Matricized) {
            let split = self.split();
            if split == 0 || split >= shape.order() {
                return bad("matricized_split must lie in 1..d");
            }
        }
        self.solver.validate()
    }

    pub fn bounds(&self) -> (f64, f64) {
        let r = self.ranks.iter().copied().max().unwrap_or(1);
        let lower = self.lower.unwrap_or(self.alpha);
        let upper = self
            .upper
            .unwrap_or_else(|| max_qnorm_upper_bound(r, self.shape.len(), self.alpha).max(lower));
        (lower, upper)
    }

    fn split(&self) -> usize {
        self.matricized_split.unwrap_or(self.shape.len() / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub sample_rate: f64,
    pub noise_db: Option<f64>,
    pub method: GridMethod,
    pub trial: usize,
    pub rel_err_sq: f64,
    pub chosen_r: f64,
    pub seconds: f64,
    /// Largest factor 2,inf-norm excess over the bound across every solve.
    pub violation: f64,
    /// Noise level applied to the samples.
    pub sigma: f64,
    /// Mean-square entry of the truth.
    pub signal_power: f64,
}

/// Number of samples drawn at `rate`, never fewer than five.
pub fn sample_count(shape: &Shape, rate: f64) -> usize {
    ((rate * shape.len() as f64).round() as usize).max(5)
}

fn cell_seed(master: u64, rank: usize, rate: f64, noise_db: Option<f64>, trial: usize) -> u64 {
    let noise = noise_db.map_or(u64::MAX, f64::to_bits);
    seed::derive(master, &[seed::tag("cell"), rank as u64, rate.to_bits(), noise, trial as u64])
}

fn run_cell(
    config: &GridConfig,
    shape: &Shape,
    rank: usize,
    rate: f64,
    trial: usize,
    method: GridMethod,
) -> Result<GridRow> {
    let cell = cell_seed(config.master_seed, rank, rate, config.noise_db, trial);
    let (_, truth) = random_low_rank(shape, rank, config.factor_kind, seed::derive(cell, &[seed::tag("truth")]))?;
    let truth = truth.scaled(config.alpha);
    let sigma = match config.noise_db {
        Some(db) => noise_level_from_db(&truth, db)?,
        None => 0.0,
    };
    let m = sample_count(shape, rate);
    let idx = draw_indices(&SamplingDistribution::uniform(shape.clone()), m, seed::derive(cell, &[seed::tag("sample")]))?;
    let obs = observe(&truth, idx, sigma, seed::derive(cell, &[seed::tag("noise")]))?;
    let options = CvOptions {
        width: config.width,
        seed: seed::derive(cell, &[seed::tag(method.name())]),
        ..CvOptions::default()
    };
    let (lower, upper) = config.bounds();
    let start = Instant::now();
    let mut res = match method {
        GridMethod::Matricized => {
            matricized_baseline(&obs, shape, config.split(), lower, upper, &config.solver, config.alpha, &options)?
        }
        m => {
            let method = match m {
                GridMethod::MaxqPgd => Method::Pgd,
                GridMethod::MaxqSgd => Method::Sgd,
                _ => Method::Pqn,
            };
            let solver = SolverParams { method, ..config.solver.clone() };
            complete_with_cv(&obs, shape, lower, upper, &solver, config.alpha, &options)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok(GridRow {
        dims: shape.dims().to_vec(),
        rank,
        sample_rate: rate,
        noise_db: config.noise_db,
        method,
        trial,
        rel_err_sq: res.score(&truth)?,
        chosen_r: res.chosen_r,
        seconds,
        violation: res.solver.max_violation,
        sigma,
        signal_power: truth.mean_square(),
    })
}

/// Runs every cell of the grid on at most `jobs` threads (zero means the
/// default pool). Rows come back ordered by rank, sample rate, method and
/// trial, following the order given in the config.
pub fn run_grid(config: &GridConfig, jobs: usize) -> Result<Vec<GridRow>> {
    config.validate()?;
    let shape = Shape::new(config.shape.clone())?;
    let mut cells = Vec::new();
    for &rank in &config.ranks {
        for &rate in &config.sample_rates {
            for &method in &config.methods {
                for trial in 0..config.trials {
                    cells.push((rank, rate, method, trial));
                }
            }
        }
    }
    let rows = par::with_jobs(jobs, || {
        par::map(&cells, |&(rank, rate, method, trial)| run_cell(config, &shape, rank, rate, trial, method))
    });
    rows.into_iter().collect()
}

fn dims_label(dims: &[usize]) -> String {
    if dims.windows(2).all(|w| w[0] == w[1]) {
        dims[0].to_string()
    } else {
        dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn noise_label(db: Option<f64>) -> String {
    db.map(fmt_f64).unwrap_or_default()
}

pub const GRID_HEADER: &str = "d,N,rank,sample_rate,noise_db,method,trial,rel_err_sq,chosen_R,seconds";
pub const SUMMARY_HEADER: &str =
    "d,N,rank,sample_rate,noise_db,method,trials,mean_rel_err_sq,mean_chosen_R,mean_seconds";

pub fn write_grid_csv<W: Write>(rows: &[GridRow], mut out: W) -> Result<()> {
    writeln!(out, "{GRID_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dims.len(),
            dims_label(&r.dims),
            r.rank,
            fmt_f64(r.sample_rate),
            noise_label(r.noise_db),
            r.method.name(),
            r.trial,
            fmt_f64(r.rel_err_sq),
            fmt_f64(r.chosen_r),
            fmt_f64(r.seconds)
        )?;
    }
    Ok(())
}

/// Per-cell means over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub rank: usize,
    pub sample_rate: f64,
    pub method: GridMethod,
    pub trials: usize,
    pub mean_rel_err_sq: f64,
    pub mean_chosen_r: f64,
    pub mean_seconds: f64,
}

pub fn summarize(rows: &[GridRow]) -> Vec<GridSummary> {
    // Keyed by first appearance so the output follows the detail order.
    let mut order: Vec<(usize, u64, GridMethod)> = Vec::new();
    let mut acc: BTreeMap<(usize, u64, GridMethod), (usize, f64, f64, f64)> = BTreeMap::new();
    for r in rows {
        let key = (r.rank, r.sample_rate.to_bits(), r.method);
        let e = acc.entry(key).or_insert_with(|| {
            order.push(key);
            (0, 0.0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += r.rel_err_sq;
        e.2 += r.chosen_r;
        e.3 += r.seconds;
    }
    order
        .into_iter()
        .map(|key| {
            let (n, err, rr, secs) = acc[&key];
            let n_f = n as f64;
            GridSummary {
                rank: key.0,
                sample_rate: f64::from_bits(key.1),
                method: key.2,
                trials: n,
                mean_rel_err_sq: err / n_f,
                mean_chosen_r: rr / n_f,
                mean_seconds: secs / n_f,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[GridRow], mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    let Some(first) = rows.first() else {
        return Ok(());
    };
    for s in summarize(rows) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            first.dims.len(),
            dims_label(&first.dims),
            s.rank,
            fmt_f64(s.sample_rate),
            noise_label(first.noise_db),
            s.method.name(),
            s.trials,
            fmt_f64(s.mean_rel_err_sq),
            fmt_f64(s.mean_chosen_r),
            fmt_f64(s.mean_seconds)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormExperimentConfig {
    /// Tensor orders.
    pub dims: Vec<usize>,
    /// Side lengths; every tensor is a cube.
    pub sizes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub factor_kind: FactorKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Bisection interval. Defaults: 1 and the 2,inf-norm product of the
    /// generating factors, which is feasible by construction (at least
    /// twice the lower bound).
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default)]
    pub solver: SolverParams,
}

impl NormExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.dims.is_empty() || self.sizes.is_empty() || self.ranks.is_empty() {
            return bad("dims, sizes and ranks must be nonempty");
        }
        if self.dims.iter().any(|&d| d < 2) || self.sizes.contains(&0) || self.ranks.contains(&0) {
            return bad("need d >= 2, N >= 1 and rank >= 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        let lower = self.lower.unwrap_or(1.0);
        if !(lower > 0.0 && lower.is_finite()) {
            return bad("lower must be positive");
        }
        if let Some(upper) = self.upper {
            if !(upper > lower && upper.is_finite()) {
                return bad("need lower < upper");
            }
        }
        self.solver.validate()
    }

    /// Bisection interval for a tensor generated by `factors`.
    pub fn bounds(&self, factors: &CPFactors) -> (f64, f64) {
        let lower = self.lower.unwrap_or(1.0);
        let upper = self.upper.unwrap_or_else(|| max_qnorm_value(factors).max(2.0 * lower));
        (lower, upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub d: usize,
    pub n: usize,
    pub rank: usize,
    pub factor_kind: FactorKind,
    pub trial: usize,
    pub estimate: f64,
    pub resolution: f64,
    /// Largest factor 2,inf-norm excess over the bound across the
    /// bisection solves.
    pub violation: f64,
}

/// Estimates the max-qnorm of random unit-peak low-rank tensors for every
/// (d, N, rank, trial) cell.
pub fn run_norm_experiment(config: &NormExperimentConfig, jobs: usize) -> Result<Vec<NormRow>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &d in &config.dims {
        for &n in &config.sizes {
            for &rank in &config.ranks {
                for trial in 0..config.trials {
                    cells.push((d, n, rank, trial));
                }
            }
        }
    }
    let rows = par::with_jobs(jobs, || {
        par::map(&cells, |&(d, n, rank, trial)| -> Result<NormRow> {
            let shape = Shape::new(vec![n; d])?;
            let s = seed::derive(
                config.master_seed,
                &[seed::tag("norm"), d as u64, n as u64, rank as u64, trial as u64],
            );
            let (factors, t) = random_low_rank(&shape, rank, config.factor_kind, s)?;
            let (lower, upper) = config.bounds(&factors);
            let solver = SolverParams { seed: s, ..config.solver.clone() };
            let est = estimate_max_qnorm(&t, lower, upper, &solver)?;
            Ok(NormRow {
                d,
                n,
                rank,
                factor_kind: config.factor_kind,
                trial,
                estimate: est.value,
                resolution: est.resolution,
                violation: est.max_violation,
            })
        })
    });
    rows.into_iter().collect()
}

pub const NORM_HEADER: &str = "d,N,rank,factor_kind,trial,maxqnorm_est";

pub fn write_norm_csv<W: Write>(rows: &[NormRow], mut out: W) -> Result<()> {
    writeln!(out, "{NORM_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.d,
            r.n,
            r.rank,
            r.factor_kind.name(),
            r.trial,
            fmt_f64(r.estimate)
        )?;
    }
    Ok(())
}
