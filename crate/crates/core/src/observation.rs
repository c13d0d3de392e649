//! Sampling model: indices drawn with replacement from a distribution over
//! entries, each observed value corrupted by additive Gaussian noise.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{DenseTensor, Index, Shape};

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingKind {
    Uniform,
    /// Flat weights in storage order, nonnegative and summing to one.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    shape: Shape,
    kind: SamplingKind,
    /// Documented lower-bound parameter `mu >= 1` on `pi_w * prod N_i`.
    mu: Option<f64>,
}

impl SamplingDistribution {
    pub fn uniform(shape: Shape) -> Self {
        Self {
            shape,
            kind: SamplingKind::Uniform,
            mu: Some(1.0),
        }
    }

    pub fn explicit(shape: Shape, weights: Vec<f64>, mu: Option<f64>) -> Result<Self> {
        if weights.len() != shape.len() {
            return Err(Error::Distribution(format!(
                "{} weights for {} entries",
                weights.len(),
                shape.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Distribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!("weights sum to {total}, expected 1")));
        }
        if let Some(mu) = mu {
            if !(mu >= 1.0) {
                return Err(Error::Distribution(format!("mu must be >= 1, got {mu}")));
            }
        }
        Ok(Self {
            shape,
            kind: SamplingKind::Explicit(weights),
            mu,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn kind(&self) -> &SamplingKind {
        &self.kind
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn weight(&self, offset: usize) -> f64 {
        match &self.kind {
            SamplingKind::Uniform => 1.0 / self.shape.len() as f64,
            SamplingKind::Explicit(w) => w[offset],
        }
    }

    /// Largest entry probability scaled by the entry count; equals one for
    /// uniform sampling.
    pub fn max_weight_ratio(&self) -> f64 {
        let n = self.shape.len() as f64;
        match &self.kind {
            SamplingKind::Uniform => 1.0,
            SamplingKind::Explicit(w) => w.iter().fold(0.0f64, |m, &x| m.max(x)) * n,
        }
    }
}

/// Observed entries `Y_t = T(w_t) + sigma * xi_t`, one per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    shape: Shape,
    indices: Vec<Index>,
    values: Vec<f64>,
    sigma: f64,
}

impl ObservationSet {
    pub fn new(shape: Shape, indices: Vec<Index>, values: Vec<f64>, sigma: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        for ix in &indices {
            shape.check_index(ix)?;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observed values must be finite".into()));
        }
        Ok(Self {
            shape,
            indices,
            values,
            sigma,
        })
    }

    /// Every entry of `tensor` observed once, without noise.
    pub fn full(tensor: &DenseTensor) -> Self {
        let shape = tensor.shape().clone();
        let indices = (0..shape.len())
            .map(|o| shape.unflatten(o).expect("offset in range"))
            .collect();
        Self {
            shape,
            indices,
            values: tensor.values().to_vec(),
            sigma: 0.0,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Observation slots `slots`, in the given order.
    pub fn subset(&self, slots: &[usize]) -> Self {
        Self {
            shape: self.shape.clone(),
            indices: slots.iter().map(|&s| self.indices[s].clone()).collect(),
            values: slots.iter().map(|&s| self.values[s]).collect(),
            sigma: self.sigma,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            sigma: self.sigma * c.abs(),
            ..self.clone()
        }
    }

    /// Re-indexes the observations onto another shape through `map`, which
    /// receives and returns 0-based coordinates.
    pub fn remap(&self, shape: Shape, map: impl Fn(&[usize]) -> Vec<usize>) -> Result<Self> {
        let indices = self
            .indices
            .iter()
            .map(|ix| {
                let zero: Vec<usize> = ix.0.iter().map(|c| c - 1).collect();
                Index(map(&zero).into_iter().map(|c| c + 1).collect())
            })
            .collect();
        Self::new(shape, indices, self.values.clone(), self.sigma)
    }
}

/// Draws `m` indices i.i.d. from `dist`, with replacement.
pub fn draw_indices(dist: &SamplingDistribution, m: usize, seed: u64) -> Result<Vec<Index>> {
    let mut rng = seed::rng(seed, &[seed::tag("draw_indices")]);
    let shape = dist.shape();
    let offsets: Vec<usize> = match dist.kind() {
        SamplingKind::Uniform => (0..m).map(|_| rng.random_range(0..shape.len())).collect(),
        SamplingKind::Explicit(w) => {
            let sampler =
                WeightedIndex::new(w).map_err(|e| Error::Distribution(e.to_string()))?;
            (0..m).map(|_| sampler.sample(&mut rng)).collect()
        }
    };
    offsets.into_iter().map(|o| shape.unflatten(o)).collect()
}

/// Samples `tensor` at `indices` and adds `sigma`-scaled standard normal noise.
pub fn observe(
    tensor: &DenseTensor,
    indices: Vec<Index>,
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    let mut rng = seed::rng(seed, &[seed::tag("observe")]);
    let values = indices
        .iter()
        .map(|ix| {
            let v = tensor.get(ix)?;
            let xi: f64 = rng.sample(StandardNormal);
            Ok(if sigma == 0.0 { v } else { v + sigma * xi })
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(tensor.shape().clone(), indices, values, sigma)
}

/// Random partition of `0..m` into sorted train and validation slot lists.
/// The train part receives `round(fraction * m)` slots, clamped so both
/// parts are nonempty.
pub fn split_slots(m: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if m < 2 {
        return Err(Error::Split(m));
    }
    let n_train = ((fraction * m as f64).round() as usize).clamp(1, m - 1);
    let mut slots: Vec<usize> = (0..m).collect();
    slots.shuffle(&mut seed::rng(seed, &[seed::tag("split")]));
    let mut train = slots[..n_train].to_vec();
    let mut validate = slots[n_train..].to_vec();
    train.sort_unstable();
    validate.sort_unstable();
    Ok((train, validate))
}

pub fn split_train_validate(
    obs: &ObservationSet,
    fraction: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet)> {
    let (train, validate) = split_slots(obs.len(), fraction, seed)?;
    Ok((obs.subset(&train), obs.subset(&validate)))
}

/// Noise level for a target signal-to-noise ratio in decibels, measured
/// against the mean-square entry of `tensor`.
pub fn noise_level_from_db(tensor: &DenseTensor, snr_db: f64) -> Result<f64> {
    let ms = tensor.mean_square();
    if ms == 0.0 {
        return Err(Error::InvalidArgument("zero tensor has no signal power".into()));
    }
    Ok((ms / 10f64.powf(snr_db / 10.0)).sqrt())
}
