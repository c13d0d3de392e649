//! Least-squares objective over a stacked factor vector.
//!
//! Factors live in one flat buffer `[V_1; V_2; ...; V_d]`, row-major with
//! `k` columns. Only the observed entries are ever composed, so memory stays
//! at `O(sum N_j * k + m)`.

use crate::observation::ObservationSet;
use crate::par;

/// Observations per parallel work unit. Partial sums are combined in chunk
/// order, so results do not depend on the number of threads.
const OBS_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    dims: Vec<usize>,
    k: usize,
    /// First stacked row of each factor.
    row_offset: Vec<usize>,
    total_rows: usize,
    /// `m x d` 0-based coordinates.
    idx: Vec<u32>,
    targets: Vec<f64>,
}

impl Problem {
    /// Builds the objective with every target divided by `target_scale`.
    pub fn new(obs: &ObservationSet, k: usize, target_scale: f64) -> Self {
        let dims = obs.shape().dims().to_vec();
        let mut row_offset = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &n in &dims {
            row_offset.push(acc);
            acc += n;
        }
        let idx = obs
            .indices()
            .iter()
            .flat_map(|ix| ix.coords().iter().map(|&c| (c - 1) as u32))
            .collect();
        let targets = obs.values().iter().map(|v| v / target_scale).collect();
        Self {
            dims,
            k,
            row_offset,
            total_rows: acc,
            idx,
            targets,
        }
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn width(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.targets.len()
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn len(&self) -> usize {
        self.total_rows * self.k
    }

    pub fn row_offset(&self, mode: usize) -> usize {
        self.row_offset[mode]
    }

    /// Stacked row of mode `mode` touched by observation `t`.
    pub fn stacked_row(&self, t: usize, mode: usize) -> usize {
        self.row_offset[mode] + self.idx[t * self.dims.len() + mode] as usize
    }

    /// Sum of squared residuals over `slots`; when `grad` is given, adds
    /// `coef * residual * prod_{l != j} V_l` into the touched rows.
    fn accumulate<I: Iterator<Item = usize>>(
        &self,
        w: &[f64],
        slots: I,
        mut grad: Option<&mut [f64]>,
        coef: f64,
        prefix: &mut [f64],
    ) -> f64 {
        let d = self.dims.len();
        let k = self.k;
        let mut base = [0usize; 16];
        let mut sse = 0.0;
        for t in slots {
            for j in 0..d {
                base[j] = self.stacked_row(t, j) * k;
            }
            // prefix[j*k + c] = prod_{l < j} w_l[c]
            prefix[..k].iter_mut().for_each(|p| *p = 1.0);
            for j in 0..d {
                let (done, next) = prefix.split_at_mut((j + 1) * k);
                let cur = &done[j * k..];
                let row = &w[base[j]..base[j] + k];
                for ((n, &p), &x) in next[..k].iter_mut().zip(cur).zip(row) {
                    *n = p * x;
                }
            }
            let pred: f64 = prefix[d * k..(d + 1) * k].iter().sum();
            let r = pred - self.targets[t];
            sse += r * r;
            if let Some(g) = grad.as_deref_mut() {
                let scale = coef * r;
                // Reuse the last prefix slot as the running suffix product.
                let (head, suffix) = prefix.split_at_mut(d * k);
                suffix[..k].iter_mut().for_each(|s| *s = scale);
                for j in (0..d).rev() {
                    let pre = &head[j * k..(j + 1) * k];
                    let row = &w[base[j]..base[j] + k];
                    let grow = &mut g[base[j]..base[j] + k];
                    for c in 0..k {
                        grow[c] += pre[c] * suffix[c];
                        suffix[c] *= row[c];
                    }
                }
            }
        }
        sse
    }

    fn scratch(&self) -> Vec<f64> {
        vec![0.0; (self.dims.len() + 1) * self.k]
    }

    /// Mean squared residual.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let m = self.m();
        let chunks = m.div_ceil(OBS_CHUNK);
        let parts = par::map_range(chunks, |c| {
            let lo = c * OBS_CHUNK;
            let hi = (lo + OBS_CHUNK).min(m);
            self.accumulate(w, lo..hi, None, 0.0, &mut self.scratch())
        });
        parts.iter().sum::<f64>() / m as f64
    }

    /// Mean squared residual and its gradient, written into `grad`.
    pub fn loss_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.m();
        let coef = 2.0 / m as f64;
        let chunks = m.div_ceil(OBS_CHUNK);
        grad.iter_mut().for_each(|g| *g = 0.0);
        if chunks <= 1 {
            return self.accumulate(w, 0..m, Some(grad), coef, &mut self.scratch()) / m as f64;
        }
        let parts = par::map_range(chunks, |c| {
            let lo = c * OBS_CHUNK;
            let hi = (lo + OBS_CHUNK).min(m);
            let mut g = vec![0.0; self.len()];
            let sse = self.accumulate(w, lo..hi, Some(&mut g), coef, &mut self.scratch());
            (sse, g)
        });
        let mut sse = 0.0;
        for (s, g) in parts {
            sse += s;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        sse / m as f64
    }

    /// Batch loss `(1/|S|) sum_{t in S} r_t^2` and its gradient, added into
    /// `grad` (which the caller keeps zero outside touched rows).
    pub fn batch_loss_grad(&self, w: &[f64], slots: &[usize], grad: &mut [f64]) -> f64 {
        let coef = 2.0 / slots.len() as f64;
        self.accumulate(w, slots.iter().copied(), Some(grad), coef, &mut self.scratch())
            / slots.len() as f64
    }
}

/// Projects each `k`-long row of `w` onto the l2 ball of radius `bound`.
pub(crate) fn project_all(w: &mut [f64], k: usize, bound: f64) {
    for row in w.chunks_exact_mut(k) {
        project_row(row, bound);
    }
}

pub(crate) fn project_row(row: &mut [f64], bound: f64) {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        row.iter_mut().for_each(|x| *x *= s);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
