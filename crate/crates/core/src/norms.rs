//! Max-qnorm machinery on factorizations.
//!
//! [`max_qnorm_value`] evaluates `prod_j ||U^(j)||_{2,inf}` for one given
//! factorization. That is only an upper bound on the max-qnorm of the
//! composed tensor; the norm itself is a minimum over all factorizations and
//! is estimated by [`crate::completion::estimate_max_qnorm`].

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tensor::CPFactors;

/// Midpoint of the known range of Grothendieck's constant. Diagnostic only.
pub const GROTHENDIECK: f64 = 1.73;
pub const GROTHENDIECK_RANGE: (f64, f64) = (1.67, 1.79);

/// A max-qnorm budget `R` with entrywise bound `alpha`, and the implied
/// per-factor row-norm bound `R^(1/d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QnormBound {
    r: f64,
    alpha: f64,
    per_factor: f64,
}

impl QnormBound {
    pub fn new(r: f64, alpha: f64, order: usize) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !(alpha > 0.0) || order == 0 {
            return Err(Error::InvalidArgument(format!(
                "bound needs R > 0, alpha > 0, d >= 1 (got R={r}, alpha={alpha}, d={order})"
            )));
        }
        if r < alpha {
            return Err(Error::InvalidArgument(format!("R = {r} below alpha = {alpha}")));
        }
        Ok(Self {
            r,
            alpha,
            per_factor: r.powf(1.0 / order as f64),
        })
    }

    /// A budget with no entrywise bound tighter than the one it implies
    /// (`||X||_inf <= ||X||_max <= R`).
    pub fn budget(r: f64, order: usize) -> Result<Self> {
        Self::new(r, r, order)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn per_factor(&self) -> f64 {
        self.per_factor
    }
}

/// Largest row l2-norm.
pub fn two_inf_norm(u: ArrayView2<f64>) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::Dimension("two-inf norm of an empty matrix".into()));
    }
    Ok(u.rows()
        .into_iter()
        .map(|row| row.dot(&row).sqrt())
        .fold(0.0, f64::max))
}

pub fn max_qnorm_value(factors: &CPFactors) -> f64 {
    factors
        .factors()
        .iter()
        .map(|f| two_inf_norm(f.view()).expect("factors are nonempty"))
        .product()
}

/// Scales every row whose l2-norm exceeds `bound` back onto the sphere of
/// radius `bound`; other rows are untouched.
pub fn project_rows(u: &Array2<f64>, bound: f64) -> Array2<f64> {
    let mut out = u.clone();
    project_rows_in_place(&mut out, bound);
    out
}

pub fn project_rows_in_place(u: &mut Array2<f64>, bound: f64) {
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > bound {
            row *= bound / norm;
        }
    }
}

/// Rescales factors so each has 2,inf-norm equal to the geometric mean of the
/// originals. The composed tensor is unchanged.
pub fn balance(factors: &CPFactors) -> CPFactors {
    let norms: Vec<f64> = factors
        .factors()
        .iter()
        .map(|f| two_inf_norm(f.view()).expect("nonempty"))
        .collect();
    if norms.iter().any(|&n| n == 0.0) {
        return factors.clone();
    }
    let d = norms.len() as f64;
    let geo = norms.iter().map(|n| n.ln()).sum::<f64>() / d;
    let mut out = factors.clone();
    for (j, n) in norms.iter().enumerate() {
        out.scale_factor(j, (geo - n.ln()).exp());
    }
    out
}

/// Concatenates the columns of two balanced factorizations so the result
/// composes to the sum of the two tensors.
pub fn concat_factorizations(first: &CPFactors, second: &CPFactors) -> Result<CPFactors> {
    if first.dims() != second.dims() {
        return Err(Error::Dimension(format!(
            "cannot concatenate factorizations of shapes {:?} and {:?}",
            first.dims(),
            second.dims()
        )));
    }
    let (a, b) = (balance(first), balance(second));
    let factors = a
        .factors()
        .iter()
        .zip(b.factors())
        .map(|(x, y)| concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts match"))
        .collect();
    CPFactors::new(factors)
}

/// `(r sqrt(r))^(d-1) alpha`: M-norm bound for rank-`r` tensors with
/// `||T||_inf <= alpha`.
pub fn m_norm_upper_bound(r: usize, d: usize, alpha: f64) -> f64 {
    let r = r as f64;
    (r * r.sqrt()).powi(d as i32 - 1) * alpha
}

/// `sqrt(r^(d^2 - d)) alpha`: max-qnorm bound for rank-`r` tensors with
/// `||T||_inf <= alpha`.
pub fn max_qnorm_upper_bound(r: usize, d: usize, alpha: f64) -> f64 {
    (r as f64).powf((d * d - d) as f64 / 2.0) * alpha
}
