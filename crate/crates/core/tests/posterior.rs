mod common;

use common::{dense_posterior, max_abs_diff, random_gram};
use gp_select::diversity::DiversityState;
use gp_select::posterior::PosteriorState;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn incremental_matches_dense_inverse(
        seed in 0u64..10_000,
        n in 2usize..40,
        noise in 0.05f64..1.0,
        frac in 0.1f64..1.0,
    ) {
        let g = random_gram(n, seed);
        let t = ((n as f64 * frac) as usize).max(1);
        let mut post = PosteriorState::new(&g, noise).unwrap();
        let mut observed = Vec::new();
        let mut ys = Vec::new();
        for i in 0..t {
            let v = (i * 7 + seed as usize) % n;
            if post.is_observed(v) {
                continue;
            }
            let y = ((v as f64) * 0.71 + seed as f64).sin();
            post.update(v, y).unwrap();
            observed.push(v);
            ys.push(y);
        }
        let (mu, var) = dense_posterior(g.matrix(), &observed, &ys, noise);
        let vars: Vec<f64> = (0..n).map(|v| post.variance(v).unwrap()).collect();
        prop_assert!(max_abs_diff(&post.means(), &mu) < 1e-8);
        prop_assert!(max_abs_diff(&vars, &var) < 1e-8);
    }

    #[test]
    fn variance_never_grows_and_stays_non_negative(seed in 0u64..10_000, n in 2usize..30) {
        let g = random_gram(n, seed);
        let mut post = PosteriorState::new(&g, 0.1).unwrap();
        let mut last: Vec<f64> = (0..n).map(|v| post.variance(v).unwrap()).collect();
        for v in (0..n).step_by(2) {
            post.update(v, 1.0).unwrap();
            let now: Vec<f64> = (0..n).map(|u| post.variance(u).unwrap()).collect();
            for (a, b) in now.iter().zip(&last) {
                prop_assert!(*a >= 0.0);
                prop_assert!(a <= b, "variance grew from {b} to {a}");
            }
            last = now;
        }
    }

    #[test]
    fn batch_means_equal_single_means(seed in 0u64..10_000, n in 2usize..30) {
        let g = random_gram(n, seed);
        let mut post = PosteriorState::new(&g, 0.3).unwrap();
        for v in (0..n).step_by(3) {
            post.update(v, v as f64 * 0.1 - 0.4).unwrap();
        }
        let all = post.means();
        for (v, m) in all.iter().enumerate() {
            prop_assert_eq!(m.to_bits(), post.mean(v).to_bits());
        }
    }

    #[test]
    fn shared_noise_makes_diversity_variance_the_model_variance(seed in 0u64..10_000, n in 3usize..30) {
        let g = random_gram(n, seed);
        let mut post = PosteriorState::new(&g, 0.2).unwrap();
        let mut div = DiversityState::new(&g, 0.2).unwrap();
        for v in (0..n).step_by(2) {
            post.update(v, 0.5).unwrap();
            div.commit(v).unwrap();
        }
        for v in (1..n).step_by(2) {
            let a = post.variance(v).unwrap();
            let b = div.conditional_variance(v).unwrap();
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn factor_reconstructs_noisy_gram() {
    let g = random_gram(12, 4);
    let mut post = PosteriorState::new(&g, 0.3).unwrap();
    let order = [5, 1, 9, 0];
    for v in order {
        post.update(v, 1.0).unwrap();
    }
    let l = post.factor_matrix();
    let rebuilt = &l * l.transpose();
    for (a, &i) in order.iter().enumerate() {
        for (b, &j) in order.iter().enumerate() {
            let expected = g.matrix()[(i, j)] + if a == b { 0.09 } else { 0.0 };
            assert!((rebuilt[(a, b)] - expected).abs() < 1e-12);
        }
    }
}
