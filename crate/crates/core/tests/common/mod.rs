#![allow(dead_code)]

use gp_select::items::{FeedbackOracle, Item, ItemSet};
use gp_select::kernels::{gram, GramMatrix, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Posterior mean and variance of every item from an explicit inverse of
/// `K_t + σ̂² I`.
pub fn dense_posterior(
    k: &DMatrix<f64>,
    observed: &[usize],
    y: &[f64],
    noise: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = k.nrows();
    let t = observed.len();
    if t == 0 {
        return (vec![0.0; n], (0..n).map(|i| k[(i, i)]).collect());
    }
    let kt = DMatrix::from_fn(t, t, |a, b| {
        k[(observed[a], observed[b])] + if a == b { noise * noise } else { 0.0 }
    });
    let inv = kt.try_inverse().expect("invertible");
    let yv = DVector::from_column_slice(y);
    let alpha = &inv * yv;
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for v in 0..n {
        let kv = DVector::from_fn(t, |a, _| k[(observed[a], v)]);
        means.push(kv.dot(&alpha));
        vars.push(k[(v, v)] - kv.dot(&(&inv * &kv)));
    }
    (means, vars)
}

pub fn random_items(n: usize, d: usize, cost_range: (f64, f64), rng: &mut ChaCha8Rng) -> ItemSet {
    let items = (0..n)
        .map(|id| Item {
            id,
            features: (0..d).map(|_| rng.random::<f64>()).collect(),
            cost: if cost_range.0 == cost_range.1 {
                cost_range.0
            } else {
                rng.random_range(cost_range.0..cost_range.1)
            },
        })
        .collect();
    ItemSet::new(items, n as f64).unwrap()
}

/// Random PSD Gram matrix from an RBF or linear kernel on random features.
pub fn random_gram(n: usize, seed: u64) -> GramMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = random_items(n, 3, (1.0, 1.0), &mut rng);
    let kernel = if seed % 2 == 0 {
        KernelSpec::Rbf {
            bandwidth: rng.random_range(0.2..1.0),
        }
    } else {
        KernelSpec::Linear
    };
    gram(&kernel, &items).unwrap()
}

/// Uniform-cost instance with values drawn independently of the kernel.
pub fn random_instance(
    n: usize,
    seed: u64,
    cost_range: (f64, f64),
) -> (ItemSet, FeedbackOracle, KernelSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = random_items(n, 2, cost_range, &mut rng);
    let values = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let oracle = FeedbackOracle::new(values, 0.05, seed.wrapping_add(1)).unwrap();
    (items, oracle, KernelSpec::Rbf { bandwidth: 0.3 })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
