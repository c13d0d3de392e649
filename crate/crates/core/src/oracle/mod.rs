//! Exact desk-scale oracles over the set of rank-1 sign tensors.
//!
//! The atomic M-norm is the gauge of the convex hull of all rank-1 `+-1`
//! tensors. For small shapes the atoms can be listed outright and the norm
//! becomes a linear program, which gives ground truth for property tests.

pub mod simplex;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{CPFactors, DenseTensor, Shape};
use simplex::LpStatus;

/// Largest `sum_j N_j` accepted by the enumerating oracles.
pub const ENUMERATION_GUARD: usize = 20;

/// Tolerance used by [`m_ball_membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// All rank-1 sign tensors of a shape, deduplicated, with `X` and `-X` both
/// present. Atom `2i+1` is the negation of atom `2i`.
#[derive(Debug, Clone)]
pub struct AtomBasis {
    shape: Shape,
    atoms: Vec<DenseTensor>,
    signs: Vec<Vec<Vec<f64>>>,
}

impl AtomBasis {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn atoms(&self) -> &[DenseTensor] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Width-1 sign factors composing atom `i`.
    pub fn factors(&self, i: usize) -> CPFactors {
        CPFactors::new(
            self.signs[i]
                .iter()
                .map(|v| Array2::from_shape_vec((v.len(), 1), v.clone()).expect("column"))
                .collect(),
        )
        .expect("valid factors")
    }
}

fn guard(shape: &Shape) -> Result<()> {
    if shape.dims().iter().sum::<usize>() > ENUMERATION_GUARD {
        return Err(Error::TooLarge(shape.dims().to_vec(), ENUMERATION_GUARD));
    }
    Ok(())
}

fn sign_tensor(shape: &Shape, vectors: &[Vec<f64>]) -> DenseTensor {
    let values = (0..shape.len())
        .map(|o| {
            shape
                .coords(o)
                .iter()
                .zip(vectors)
                .map(|(&i, v)| v[i])
                .product()
        })
        .collect();
    DenseTensor::new(shape.clone(), values).expect("sign entries are finite")
}

/// Enumerates the atoms. Orbit representatives have first entry `+1` in
/// every factor; each is listed together with its negation, which gives
/// `2^(sum N_j - d + 1)` atoms.
pub fn enumerate_atoms(shape: &Shape) -> Result<AtomBasis> {
    guard(shape)?;
    let dims = shape.dims();
    let free_bits: usize = dims.iter().map(|n| n - 1).sum();
    let mut atoms = Vec::with_capacity(2 << free_bits);
    let mut signs = Vec::with_capacity(2 << free_bits);
    for mask in 0u64..(1u64 << free_bits) {
        let mut bit = 0;
        let vectors: Vec<Vec<f64>> = dims
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|i| {
                        if i == 0 {
                            1.0
                        } else {
                            let s = if mask >> bit & 1 == 1 { -1.0 } else { 1.0 };
                            bit += 1;
                            s
                        }
                    })
                    .collect()
            })
            .collect();
        let mut negated = vectors.clone();
        negated[0].iter_mut().for_each(|x| *x = -*x);
        let atom = sign_tensor(shape, &vectors);
        let flipped = atom.scaled(-1.0);
        atoms.push(atom);
        atoms.push(flipped);
        signs.push(vectors);
        signs.push(negated);
    }
    Ok(AtomBasis {
        shape: shape.clone(),
        atoms,
        signs,
    })
}

/// Result of the M-norm linear program.
#[derive(Debug, Clone)]
pub struct LPSolution {
    pub value: f64,
    /// Nonnegative weight per atom, aligned with [`AtomBasis::atoms`].
    pub coefficients: Vec<f64>,
    pub status: LpStatus,
}

/// Exact atomic M-norm: `min sum c_X  s.t.  sum c_X X = T, c_X >= 0`.
pub fn m_norm_exact(tensor: &DenseTensor) -> Result<LPSolution> {
    let basis = enumerate_atoms(tensor.shape())?;
    m_norm_with_basis(tensor, &basis)
}

pub fn m_norm_with_basis(tensor: &DenseTensor, basis: &AtomBasis) -> Result<LPSolution> {
    if basis.shape() != tensor.shape() {
        return Err(Error::Dimension("atom basis shape does not match tensor".into()));
    }
    let rows = tensor.shape().len();
    let n = basis.len();
    let mut a = vec![0.0; rows * n];
    for (j, atom) in basis.atoms().iter().enumerate() {
        for (i, &v) in atom.values().iter().enumerate() {
            a[i * n + j] = v;
        }
    }
    let out = simplex::solve(&a, tensor.values(), &vec![1.0; n])?;
    let value = out.x.iter().sum();
    Ok(LPSolution {
        value,
        coefficients: out.x,
        status: out.status,
    })
}

/// Whether `tensor` lies in the M-norm ball of the given radius.
pub fn m_ball_membership(tensor: &DenseTensor, radius: f64) -> Result<bool> {
    Ok(m_norm_exact(tensor)?.value <= radius + MEMBERSHIP_TOL)
}

/// `max |sum T(i) x_1(i_1) ... x_d(i_d)|` over all sign-vector tuples,
/// by direct enumeration of the tuples.
pub fn inf_one_norm_bruteforce(tensor: &DenseTensor) -> Result<f64> {
    let shape = tensor.shape();
    guard(shape)?;
    let dims = shape.dims();
    let total_bits: usize = dims.iter().sum();
    let coords: Vec<Vec<usize>> = (0..shape.len()).map(|o| shape.coords(o)).collect();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let mut best = 0.0f64;
    for mask in 0u64..(1u64 << total_bits) {
        let mut s = 0.0;
        for (c, &v) in coords.iter().zip(tensor.values()) {
            let parity = c
                .iter()
                .zip(&offsets)
                .fold(0u64, |p, (&i, &off)| p ^ (mask >> (off + i) & 1));
            s += if parity == 1 { -v } else { v };
        }
        best = best.max(s.abs());
    }
    Ok(best)
}

/// `max <T, U>` over the atoms of `basis`.
pub fn max_atom_correlation(tensor: &DenseTensor, basis: &AtomBasis) -> Result<f64> {
    basis
        .atoms()
        .iter()
        .map(|u| tensor.inner(u))
        .try_fold(f64::NEG_INFINITY, |m, x| Ok(m.max(x?)))
}
