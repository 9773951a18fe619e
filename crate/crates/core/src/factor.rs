//! Growing lower-triangular factor of `K_S + noise² I`.
//!
//! Rows are only ever appended. Each append costs one forward substitution
//! plus a square root, and caches the kernel column of the new item so
//! later solves never touch the kernel again.
//!
//! Forward substitution against a prefix of rows reproduces the prefix of
//! the solution bit for bit, and the squared norm is accumulated in index
//! order. A variance computed later is therefore never larger in floating
//! point than one computed earlier for the same item, which is what makes
//! stale variances exact upper bounds for the lazy scheduler.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::Covariance;

/// Relative slack below zero tolerated before a variance is reported as a
/// numerical failure.
const NEGATIVE_VARIANCE_SLACK: f64 = 1e-10;

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Debug)]
pub(crate) struct IncrementalFactor {
    noise_var: f64,
    packed: Vec<f64>,
    observed: Vec<usize>,
    member: Vec<bool>,
    columns: Vec<Vec<f64>>,
}

impl IncrementalFactor {
    pub fn new(n: usize, noise_var: f64) -> Self {
        IncrementalFactor {
            noise_var,
            packed: Vec::new(),
            observed: Vec::new(),
            member: vec![false; n],
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn contains(&self, id: usize) -> bool {
        self.member[id]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    /// Solves `L w = k_S(id)` into `w` and returns `|w|²`.
    pub fn whiten(&self, id: usize, w: &mut Vec<f64>) -> f64 {
        w.clear();
        let mut sumsq = 0.0;
        for i in 0..self.len() {
            let row = self.row(i);
            let wi = (self.columns[i][id] - dot(&row[..i], w)) / row[i];
            w.push(wi);
            sumsq += wi * wi;
        }
        sumsq
    }

    /// Predictive variance `κ(id,id) - k_Sᵀ (K_S + noise² I)⁻¹ k_S`,
    /// clamped at zero within a small relative slack.
    pub fn variance<C: Covariance + ?Sized>(
        &self,
        cov: &C,
        id: usize,
        scratch: &mut Vec<f64>,
    ) -> Result<f64> {
        let prior = cov.diagonal(id);
        let raw = prior - self.whiten(id, scratch);
        if raw >= 0.0 {
            Ok(raw)
        } else if raw >= -NEGATIVE_VARIANCE_SLACK * prior.abs().max(1.0) {
            Ok(0.0)
        } else {
            Err(Error::Numerical(format!(
                "variance {raw:e} for item {id} is negative; factor is corrupted"
            )))
        }
    }

    /// Appends `id`, returning its whitened cross-covariance and the new
    /// diagonal pivot.
    pub fn append<C: Covariance + ?Sized>(&mut self, cov: &C, id: usize) -> Result<(Vec<f64>, f64)> {
        let mut w = Vec::with_capacity(self.len() + 1);
        let sumsq = self.whiten(id, &mut w);
        let pivot_sq = cov.diagonal(id) + self.noise_var - sumsq;
        if !(pivot_sq > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive pivot {pivot_sq:e} while adding item {id}"
            )));
        }
        let pivot = pivot_sq.sqrt();
        self.packed.extend_from_slice(&w);
        self.packed.push(pivot);
        let mut column = Vec::with_capacity(cov.len());
        cov.column_into(id, &mut column);
        self.columns.push(column);
        self.observed.push(id);
        self.member[id] = true;
        Ok((w, pivot))
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn back_substitute(&self, z: &[f64]) -> Vec<f64> {
        let t = self.len();
        let mut x = z.to_vec();
        for i in (0..t).rev() {
            let mut s = x[i];
            for j in i + 1..t {
                s -= self.row(j)[i] * x[j];
            }
            x[i] = s / self.row(i)[i];
        }
        x
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_fn(t, t, |i, j| if j <= i { self.row(i)[j] } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
        assert_eq!(dot(&[], &[]), 0.0);
    }
}
