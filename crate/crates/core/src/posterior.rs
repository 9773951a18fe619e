//! Incremental Gaussian-process posterior over item values.
//!
//! With `S_t` the observed items, `y_t` their noisy targets and
//! `L Lᵀ = K_t + σ̂² I`:
//!
//! ```text
//! μ_t(v)  = k_t(v)ᵀ (K_t + σ̂² I)⁻¹ y_t
//! σ_t²(v) = κ(v,v) − k_t(v)ᵀ (K_t + σ̂² I)⁻¹ k_t(v)
//! ```
//!
//! The mean weights `(K_t + σ̂² I)⁻¹ y_t` are refreshed after every update,
//! so means cost `O(t)` per item. A variance is one forward substitution,
//! `O(t²)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::factor::{dot, IncrementalFactor};
use crate::kernels::Covariance;

#[derive(Clone, Debug)]
pub struct PosteriorState<'a, C: Covariance + ?Sized> {
    cov: &'a C,
    noise: f64,
    factor: IncrementalFactor,
    targets: Vec<f64>,
    whitened: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a, C: Covariance + ?Sized> PosteriorState<'a, C> {
    /// Zero-mean prior with noise scale `noise` (the standard deviation σ̂).
    pub fn new(cov: &'a C, noise: f64) -> Result<Self> {
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::validation(
                "noise",
                format!("must be positive, got {noise}"),
            ));
        }
        Ok(PosteriorState {
            cov,
            noise,
            factor: IncrementalFactor::new(cov.len(), noise * noise),
            targets: Vec::new(),
            whitened: Vec::new(),
            weights: Vec::new(),
        })
    }

    pub fn covariance(&self) -> &'a C {
        self.cov
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Number of observations `t`.
    pub fn t(&self) -> usize {
        self.factor.len()
    }

    pub fn n(&self) -> usize {
        self.cov.len()
    }

    pub fn observed(&self) -> &[usize] {
        self.factor.observed()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn is_observed(&self, id: usize) -> bool {
        self.factor.contains(id)
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.n() {
            return Err(Error::Index {
                index: id,
                len: self.n(),
            });
        }
        Ok(())
    }

    /// Adds observation `y` for item `id`. Items can be observed only once.
    pub fn update(&mut self, id: usize, y: f64) -> Result<()> {
        self.check(id)?;
        if self.factor.contains(id) {
            return Err(Error::Contract(format!(
                "item {id} already observed; an item cannot be selected twice"
            )));
        }
        if !y.is_finite() {
            return Err(Error::validation("y", format!("non-finite observation {y}")));
        }
        let (w, pivot) = self.factor.append(self.cov, id)?;
        let z = (y - dot(&w, &self.whitened)) / pivot;
        self.targets.push(y);
        self.whitened.push(z);
        self.weights = self.factor.back_substitute(&self.whitened);
        Ok(())
    }

    /// Posterior mean `μ_t(id)`.
    pub fn mean(&self, id: usize) -> f64 {
        let mut acc = 0.0;
        for (a, col) in self.weights.iter().zip(self.factor.columns()) {
            acc += a * col[id];
        }
        acc
    }

    /// Posterior means of every item; each entry equals [`mean`](Self::mean)
    /// bit for bit.
    pub fn means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (a, col) in self.weights.iter().zip(self.factor.columns()) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += a * c;
            }
        }
        out
    }

    /// Posterior variance `σ_t²(id)`, independent of the targets.
    pub fn variance(&self, id: usize) -> Result<f64> {
        self.check(id)?;
        self.factor.variance(self.cov, id, &mut Vec::with_capacity(self.t()))
    }

    /// [`variance`](Self::variance) reusing a caller-provided buffer.
    pub fn variance_with(&self, id: usize, scratch: &mut Vec<f64>) -> Result<f64> {
        self.factor.variance(self.cov, id, scratch)
    }

    /// Dense copy of the lower-triangular factor of `K_t + σ̂² I`.
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        self.factor.to_dense()
    }
}
