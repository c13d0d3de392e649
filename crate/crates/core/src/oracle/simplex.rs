//! Dense-tableau two-phase primal simplex with Bland's rule.
//!
//! Solves `min c'x  s.t.  Ax = b, x >= 0`. Intended for the small programs
//! produced by the desk-scale oracles; there is no sparse machinery.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`, last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.a[r * w + c];
        for j in 0..w {
            self.a[r * w + j] /= p;
        }
        let (before, rest) = self.a.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Reduced costs for cost vector `cost` over the first `active` columns.
    fn reduced_costs(&self, cost: &[f64], active: usize) -> Vec<f64> {
        let mut red = cost[..active].to_vec();
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, r) in red.iter_mut().enumerate() {
                    *r -= cb * self.at(i, j);
                }
            }
        }
        red
    }

    /// Runs simplex iterations for `cost` restricted to the first `active`
    /// columns until optimality.
    fn optimize(&mut self, cost: &[f64], active: usize) -> Result<()> {
        loop {
            if self.pivots > self.max_pivots {
                return Err(Error::LpNonConvergence(self.pivots));
            }
            let red = self.reduced_costs(cost, active);
            // Bland: lowest-index improving column.
            let Some(enter) = (0..active).find(|&j| red[j] < -COST_EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, enter);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                // Unbounded below; cannot happen for the nonnegative costs
                // used by the oracles.
                None => {
                    return Err(Error::InvalidArgument("linear program is unbounded".into()))
                }
            }
        }
    }
}

/// Minimizes `c'x` subject to `Ax = b`, `x >= 0`. `a` is row-major
/// `b.len() x c.len()`.
pub fn solve(a: &[f64], b: &[f64], c: &[f64]) -> Result<LpOutcome> {
    let m = b.len();
    let n = c.len();
    if a.len() != m * n {
        return Err(Error::Dimension(format!(
            "constraint matrix has {} entries, expected {m} x {n}",
            a.len()
        )));
    }
    let cols = n + m;
    let w = cols + 1;
    let mut tab = vec![0.0; m * w];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tab[i * w + j] = sign * a[i * n + j];
        }
        tab[i * w + n + i] = 1.0;
        tab[i * w + cols] = sign * b[i];
    }
    let mut t = Tableau {
        rows: m,
        cols,
        a: tab,
        basis: (n..n + m).collect(),
        pivots: 0,
        max_pivots: 50 * (m + n) + 10_000,
    };

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; cols];
    phase1[n..].iter_mut().for_each(|x| *x = 1.0);
    t.optimize(&phase1, cols)?;
    let infeas: f64 = (0..m).filter(|&i| t.basis[i] >= n).map(|i| t.rhs(i)).sum();
    let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if infeas > FEAS_EPS * scale {
        return Ok(LpOutcome {
            status: LpStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::NAN,
            pivots: t.pivots,
        });
    }
    // Drive remaining (zero-level) artificials out of the basis.
    let mut redundant = Vec::new();
    for i in 0..m {
        if t.basis[i] >= n {
            match (0..n).find(|&j| t.at(i, j).abs() > PIVOT_EPS) {
                Some(j) => t.pivot(i, j),
                None => redundant.push(i),
            }
        }
    }
    if !redundant.is_empty() {
        let keep: Vec<usize> = (0..m).filter(|i| !redundant.contains(i)).collect();
        let mut a2 = Vec::with_capacity(keep.len() * w);
        for &i in &keep {
            a2.extend_from_slice(&t.a[i * w..(i + 1) * w]);
        }
        t.basis = keep.iter().map(|&i| t.basis[i]).collect();
        t.a = a2;
        t.rows = keep.len();
    }

    // Phase 2 over structural columns only.
    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat(0.0).take(m));
    t.optimize(&cost, n)?;

    let mut x = vec![0.0; n];
    for i in 0..t.rows {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(LpOutcome {
        status: LpStatus::Optimal,
        x,
        objective,
        pivots: t.pivots,
    })
}
