//! Dense tensors, CP factorizations and matricizations.
//!
//! Storage is a flat vector in lexicographic order with the last index
//! varying fastest. Public [`Index`] coordinates are 1-based; everything
//! else in this module works with 0-based offsets.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dimensions `(N_1, ..., N_d)` of an order-`d` tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
    len: usize,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("shape must have at least one mode".into()));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::Dimension(format!("zero-length mode in {dims:?}")));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::Dimension(format!("element count of {dims:?} overflows")))?;
        Ok(Self { dims, len })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries `prod N_i`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major strides (last mode has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for j in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.dims[j + 1];
        }
        strides
    }

    /// Flat storage offset of 0-based coordinates. Coordinates are assumed valid.
    pub fn offset(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    /// 0-based coordinates of a flat offset.
    pub fn coords(&self, mut offset: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for j in (0..self.dims.len()).rev() {
            out[j] = offset % self.dims[j];
            offset /= self.dims[j];
        }
        out
    }

    pub fn flatten(&self, index: &Index) -> Result<usize> {
        self.check_index(index)?;
        Ok(index
            .0
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &n)| acc * n + (c - 1)))
    }

    pub fn unflatten(&self, offset: usize) -> Result<Index> {
        if offset >= self.len {
            return Err(Error::Dimension(format!(
                "offset {offset} out of range for {} entries",
                self.len
            )));
        }
        Ok(Index(self.coords(offset).into_iter().map(|c| c + 1).collect()))
    }

    pub fn check_index(&self, index: &Index) -> Result<()> {
        if index.0.len() != self.dims.len()
            || index.0.iter().zip(&self.dims).any(|(&c, &n)| c == 0 || c > n)
        {
            return Err(Error::Dimension(format!(
                "index {:?} invalid for shape {:?}",
                index.0, self.dims
            )));
        }
        Ok(())
    }
}

/// A 1-based multi-index `(i_1, ..., i_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Index(pub Vec<usize>);

impl Index {
    pub fn coords(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "{} values for shape {:?} with {} entries",
                values.len(),
                shape.dims(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor values must be finite".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let values = vec![0.0; shape.len()];
        Self { shape, values }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let values = (0..shape.len()).map(|o| f(&shape.coords(o))).collect();
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &Index) -> Result<f64> {
        Ok(self.values[self.shape.flatten(index)?])
    }

    /// Entry at 0-based coordinates.
    pub fn at(&self, coords: &[usize]) -> f64 {
        self.values[self.shape.offset(coords)]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn infinity_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        Ok(())
    }
}

/// Factor matrices `U^(1), ..., U^(d)` with a shared column count.
/// Scalar weights are absorbed into the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CPFactors {
    factors: Vec<Array2<f64>>,
}

impl CPFactors {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::Dimension("at least one factor required".into()));
        };
        let k = first.ncols();
        if k == 0 {
            return Err(Error::Dimension("factor width must be positive".into()));
        }
        if factors.iter().any(|f| f.ncols() != k || f.nrows() == 0) {
            return Err(Error::Dimension("factors must share a positive column count".into()));
        }
        Ok(Self { factors })
    }

    pub fn zeros(shape: &Shape, k: usize) -> Result<Self> {
        Self::new(shape.dims().iter().map(|&n| Array2::zeros((n, k))).collect())
    }

    pub fn width(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn factor(&self, j: usize) -> &Array2<f64> {
        &self.factors[j]
    }

    pub fn into_factors(self) -> Vec<Array2<f64>> {
        self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn check_shape(&self, shape: &Shape) -> Result<()> {
        if self.dims() != shape.dims() {
            return Err(Error::Dimension(format!(
                "factor rows {:?} do not match shape {:?}",
                self.dims(),
                shape.dims()
            )));
        }
        Ok(())
    }

    /// Value of the composed tensor at 0-based coordinates.
    pub fn entry(&self, coords: &[usize]) -> f64 {
        (0..self.width())
            .map(|c| {
                self.factors
                    .iter()
                    .zip(coords)
                    .map(|(f, &i)| f[[i, c]])
                    .product::<f64>()
            })
            .sum()
    }

    /// Multiplies every factor by `c`; the composed tensor scales by `c^d`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            factors: self.factors.iter().map(|f| f * c).collect(),
        }
    }

    pub fn scale_factor(&mut self, j: usize, c: f64) {
        self.factors[j] *= c;
    }
}

/// Composes `sum_c U^(1)(:,c) o ... o U^(d)(:,c)` into a dense tensor.
pub fn cp_compose(factors: &CPFactors, shape: &Shape) -> Result<DenseTensor> {
    factors.check_shape(shape)?;
    let d = shape.order();
    let k = factors.width();
    let strides = shape.strides();
    let mut values = vec![0.0; shape.len()];
    // Accumulate one rank-1 term at a time via running partial products.
    let mut partial = vec![0.0; shape.len()];
    for c in 0..k {
        for (o, p) in partial.iter_mut().enumerate() {
            let mut prod = 1.0;
            let mut rem = o;
            for j in 0..d {
                let i = rem / strides[j];
                rem %= strides[j];
                prod *= factors.factors[j][[i, c]];
            }
            *p = prod;
        }
        values.iter_mut().zip(&partial).for_each(|(v, p)| *v += p);
    }
    DenseTensor::new(shape.clone(), values)
}

/// Mode-`mode` matricization `X_(mode)` (1-based mode). Column index over the
/// remaining modes varies fastest in the lowest remaining mode.
pub fn matricize_mode(tensor: &DenseTensor, mode: usize) -> Result<Array2<f64>> {
    let shape = tensor.shape();
    let d = shape.order();
    if mode == 0 || mode > d {
        return Err(Error::Dimension(format!("mode {mode} out of range 1..={d}")));
    }
    let m = mode - 1;
    let dims = shape.dims();
    let rows = dims[m];
    let cols = shape.len() / rows;
    // J_k = prod_{l < k, l != m} N_l
    let mut col_stride = vec![0usize; d];
    let mut acc = 1;
    for k in 0..d {
        if k != m {
            col_stride[k] = acc;
            acc *= dims[k];
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for (o, &v) in tensor.values().iter().enumerate() {
        let coords = shape.coords(o);
        let col: usize = (0..d).filter(|&k| k != m).map(|k| coords[k] * col_stride[k]).sum();
        out[[coords[m], col]] = v;
    }
    Ok(out)
}

/// Row and column of a 0-based tensor index in the balanced unfolding `X_[j]`.
pub fn balanced_position(dims: &[usize], j: usize, coords: &[usize]) -> (usize, usize) {
    let mut row = 0;
    let mut stride = 1;
    for k in 0..j {
        row += coords[k] * stride;
        stride *= dims[k];
    }
    let mut col = 0;
    stride = 1;
    for k in j..dims.len() {
        col += coords[k] * stride;
        stride *= dims[k];
    }
    (row, col)
}

/// Inverse of [`balanced_position`].
pub fn balanced_coords(dims: &[usize], j: usize, row: usize, col: usize) -> Vec<usize> {
    let mut coords = vec![0; dims.len()];
    let mut r = row;
    for k in 0..j {
        coords[k] = r % dims[k];
        r /= dims[k];
    }
    let mut c = col;
    for k in j..dims.len() {
        coords[k] = c % dims[k];
        c /= dims[k];
    }
    coords
}

/// Balanced unfolding `X_[j]`: the first `j` modes index rows and the rest
/// index columns. `X_[1]` coincides with `X_(1)`.
pub fn unfold_balanced(tensor: &DenseTensor, j: usize) -> Result<Array2<f64>> {
    let shape = tensor.shape();
    let d = shape.order();
    if j == 0 || j >= d {
        return Err(Error::Dimension(format!("split {j} out of range 1..{d}")));
    }
    let dims = shape.dims();
    let rows: usize = dims[..j].iter().product();
    let cols: usize = dims[j..].iter().product();
    let mut out = Array2::zeros((rows, cols));
    for (o, &v) in tensor.values().iter().enumerate() {
        let (r, c) = balanced_position(dims, j, &shape.coords(o));
        out[[r, c]] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Gaussian,
    Sign,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Gaussian => "gaussian",
            FactorKind::Sign => "sign",
        }
    }
}

impl std::str::FromStr for FactorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "sign" => Ok(Self::Sign),
            _ => Err(Error::Parse(format!("unknown factor kind {s:?}"))),
        }
    }
}

/// Draws a width-`r` factorization with i.i.d. normal or sign entries and
/// rescales it so the composed tensor has unit infinity norm.
pub fn random_low_rank(
    shape: &Shape,
    r: usize,
    kind: FactorKind,
    seed: u64,
) -> Result<(CPFactors, DenseTensor)> {
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let mut rng = seed::rng(seed, &[seed::tag("random_low_rank")]);
    let factors = shape
        .dims()
        .iter()
        .map(|&n| {
            Array2::from_shape_simple_fn((n, r), || match kind {
                FactorKind::Gaussian => rng.sample::<f64, _>(StandardNormal),
                FactorKind::Sign => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
        })
        .collect();
    let factors = CPFactors::new(factors)?;
    let tensor = cp_compose(&factors, shape)?;
    let peak = tensor.infinity_norm();
    if peak == 0.0 {
        return Err(Error::InvalidArgument("random factors composed to zero".into()));
    }
    let per_factor = peak.powf(-1.0 / shape.order() as f64);
    let factors = factors.scaled(per_factor);
    let tensor = tensor.scaled(1.0 / peak);
    Ok((factors, tensor))
}
