//! Log-determinant diversity `D(S) = ½ log |I + σ_n⁻² K_{S,S}|`.
//!
//! `D` is monotone submodular. Its marginal gain only needs the predictive
//! variance of the candidate given `S` under noise `σ_n`, so the state
//! keeps its own growing factor, decoupled from the value model's σ̂.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::factor::IncrementalFactor;
use crate::kernels::{half_log_det_shifted, Covariance, GramMatrix};

/// `Δ_D = ½ log(1 + σ_n⁻² σ²)`, monotone in `variance`.
#[inline]
pub fn diversity_gain(variance: f64, sigma_n: f64) -> f64 {
    0.5 * (variance / (sigma_n * sigma_n)).ln_1p()
}

fn check_sigma(sigma_n: f64) -> Result<()> {
    if !(sigma_n > 0.0 && sigma_n.is_finite()) {
        return Err(Error::validation(
            "sigma_n",
            format!("must be positive, got {sigma_n}"),
        ));
    }
    Ok(())
}

/// `D(S)` from the Gram matrix by a dense log-determinant.
pub fn diversity_value(gram: &GramMatrix, subset: &[usize], sigma_n: f64) -> Result<f64> {
    check_sigma(sigma_n)?;
    let mut seen = HashSet::with_capacity(subset.len());
    for &v in subset {
        if v >= gram.n() {
            return Err(Error::Index {
                index: v,
                len: gram.n(),
            });
        }
        if !seen.insert(v) {
            return Err(Error::validation("subset", format!("duplicate item {v}")));
        }
    }
    Ok(half_log_det_shifted(&gram.submatrix(subset), 1.0 / (sigma_n * sigma_n)))
}

#[derive(Clone, Debug)]
pub struct DiversityState<'a, C: Covariance + ?Sized> {
    cov: &'a C,
    sigma_n: f64,
    factor: IncrementalFactor,
    cumulative: f64,
}

impl<'a, C: Covariance + ?Sized> DiversityState<'a, C> {
    pub fn new(cov: &'a C, sigma_n: f64) -> Result<Self> {
        check_sigma(sigma_n)?;
        Ok(DiversityState {
            cov,
            sigma_n,
            factor: IncrementalFactor::new(cov.len(), sigma_n * sigma_n),
            cumulative: 0.0,
        })
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn selected(&self) -> &[usize] {
        self.factor.observed()
    }

    pub fn is_selected(&self, id: usize) -> bool {
        self.factor.contains(id)
    }

    /// Running `D(S)`.
    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.cov.len() {
            return Err(Error::Index {
                index: id,
                len: self.cov.len(),
            });
        }
        Ok(())
    }

    /// `σ²_{v|S}`: predictive variance given the selected items under noise σ_n.
    pub fn conditional_variance(&self, id: usize) -> Result<f64> {
        self.check(id)?;
        self.factor
            .variance(self.cov, id, &mut Vec::with_capacity(self.factor.len()))
    }

    pub(crate) fn conditional_variance_with(&self, id: usize, scratch: &mut Vec<f64>) -> Result<f64> {
        self.factor.variance(self.cov, id, scratch)
    }

    /// `Δ_D(id | S)`; selected items have no marginal gain.
    pub fn marginal_gain(&self, id: usize) -> Result<f64> {
        self.check(id)?;
        if self.factor.contains(id) {
            return Err(Error::Contract(format!("item {id} is already selected")));
        }
        Ok(diversity_gain(self.conditional_variance(id)?, self.sigma_n))
    }

    /// Adds `id` to `S` and returns the gain it contributed.
    pub fn commit(&mut self, id: usize) -> Result<f64> {
        let gain = self.marginal_gain(id)?;
        self.factor.append(self.cov, id)?;
        self.cumulative += gain;
        Ok(gain)
    }
}
