//! Kernel functions, Gram matrices and the information constant `C_K`.
//!
//! Everything that needs pairwise similarities goes through the
//! [`Covariance`] trait. A dense [`GramMatrix`] implements it for small
//! ground sets; [`KernelCovariance`] evaluates entries on demand so that
//! the posterior never has to materialise an `n x n` matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::ItemSet;

/// Similarity function between feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `exp(-|x - x'|^2 / (2 bandwidth^2))`
    Rbf { bandwidth: f64 },
    /// Plain dot product.
    Linear,
    /// Product of a linear user kernel and a linear item kernel. Features
    /// are the row-major outer product `u ⊗ a` of length `d_user * d_item`.
    KroneckerLinear { d_user: usize, d_item: usize },
}

impl KernelSpec {
    /// Checks the kernel parameters and that they fit feature dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                    return Err(Error::validation(
                        "kernel.bandwidth",
                        format!("must be positive and finite, got {bandwidth}"),
                    ));
                }
            }
            KernelSpec::Linear => {}
            KernelSpec::KroneckerLinear { d_user, d_item } => {
                if d_user == 0 || d_item == 0 || d_user * d_item != dim {
                    return Err(Error::validation(
                        "kernel",
                        format!(
                            "kronecker_linear({d_user}, {d_item}) needs feature dimension {}, got {dim}",
                            d_user * d_item
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::validation(
                "features",
                format!("dimension mismatch: {} vs {}", x.len(), y.len()),
            ));
        }
        self.validate(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Same as [`eval`](Self::eval) without dimension or parameter checks.
    ///
    /// The result is bitwise symmetric in its arguments.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            // <u ⊗ a, u' ⊗ a'> = (u·u')(a·a'), which on the flattened outer
            // products is the Frobenius inner product.
            KernelSpec::Linear | KernelSpec::KroneckerLinear { .. } => {
                x.iter().zip(y).map(|(a, b)| a * b).sum()
            }
        }
    }
}

/// Row-major flattening of the outer product `u ⊗ a`, the feature layout
/// expected by [`KernelSpec::KroneckerLinear`].
pub fn outer_features(user: &[f64], item: &[f64]) -> Vec<f64> {
    user.iter()
        .flat_map(|u| item.iter().map(move |a| u * a))
        .collect()
}

/// Read access to the prior covariance between items.
pub trait Covariance: Sync {
    /// Number of items.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn entry(&self, i: usize, j: usize) -> f64;

    fn diagonal(&self, i: usize) -> f64 {
        self.entry(i, i)
    }

    /// Writes `κ(v, j)` for every item `v` into `out`.
    fn column_into(&self, j: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.len()).map(|i| self.entry(i, j)));
    }
}

/// Dense symmetric kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps an existing matrix after checking it is square and symmetric.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::validation(
                "gram",
                format!("not square: {}x{}", entries.nrows(), entries.ncols()),
            ));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (entries[(i, j)], entries[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::validation(
                        "gram",
                        format!("asymmetric at ({i}, {j}): {a} vs {b}"),
                    ));
                }
            }
        }
        Ok(GramMatrix { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Principal submatrix `K_{S,S}` in the order given by `subset`.
    pub fn submatrix(&self, subset: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(subset.len(), subset.len(), |a, b| {
            self.entries[(subset[a], subset[b])]
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut values: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        values.sort_by(f64::total_cmp);
        values
    }
}

impl Covariance for GramMatrix {
    fn len(&self) -> usize {
        self.n()
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    fn column_into(&self, j: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.entries.column(j).as_slice());
    }
}

/// Kernel evaluated lazily over an item set.
///
/// Entries are bit-identical to those of [`gram`] on the same inputs.
#[derive(Clone, Copy, Debug)]
pub struct KernelCovariance<'a> {
    kernel: &'a KernelSpec,
    items: &'a ItemSet,
}

impl<'a> KernelCovariance<'a> {
    pub fn new(kernel: &'a KernelSpec, items: &'a ItemSet) -> Result<Self> {
        kernel.validate(items.dim())?;
        Ok(KernelCovariance { kernel, items })
    }
}

impl Covariance for KernelCovariance<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.kernel
            .eval_unchecked(self.items.features(i), self.items.features(j))
    }
}

/// Builds the Gram matrix of `kernel` over all items.
pub fn gram(kernel: &KernelSpec, items: &ItemSet) -> Result<GramMatrix> {
    kernel.validate(items.dim())?;
    let n = items.len();
    let mut entries = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let k = kernel.eval_unchecked(items.features(i), items.features(j));
            entries[(i, j)] = k;
            entries[(j, i)] = k;
        }
    }
    Ok(GramMatrix { entries })
}

/// `½ log |I + scale · M|` for a symmetric positive semi-definite `M`.
///
/// Uses a Cholesky factor and sums the log of its diagonal; falls back to
/// the eigenvalues when the factorization is refused.
pub fn half_log_det_shifted(m: &DMatrix<f64>, scale: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = DMatrix::identity(n, n) + m * scale;
    match shifted.clone().cholesky() {
        Some(chol) => chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum(),
        None => {
            0.5 * SymmetricEigen::new(shifted)
                .eigenvalues
                .iter()
                .map(|&l| l.max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
        }
    }
}

/// `C_K = ½ log |I + noise⁻² K|`, natural log.
pub fn information_constant(gram: &GramMatrix, noise: f64) -> Result<f64> {
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(Error::validation(
            "noise",
            format!("must be positive, got {noise}"),
        ));
    }
    Ok(half_log_det_shifted(gram.matrix(), 1.0 / (noise * noise)).max(0.0))
}
