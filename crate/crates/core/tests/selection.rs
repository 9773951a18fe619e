mod common;

use common::{dense_posterior, random_instance};
use gp_select::items::synth_gp_itemset;
use gp_select::kernels::{gram, KernelCovariance, KernelSpec};
use gp_select::oracles::greedy_oracle;
use gp_select::selection::{
    run_baseline, run_gp_select, Baseline, BetaSchedule, PolicyConfig, Rule, SelectionTrace,
};
use proptest::prelude::*;

fn constant(beta: f64) -> BetaSchedule {
    BetaSchedule::Constant { value: beta }
}

fn config(rule: Rule, beta: f64, budget: f64) -> PolicyConfig {
    let mut c = PolicyConfig::new(rule, constant(beta), budget, 0.1);
    c.sigma_n = Some(0.15);
    c.lambda = 0.4;
    c
}

fn assert_well_formed(trace: &SelectionTrace) {
    let mut seen = std::collections::HashSet::new();
    let mut cost = 0.0;
    let mut value = 0.0;
    for r in &trace.rounds {
        assert!(seen.insert(r.item), "item {} selected twice", r.item);
        cost += r.cost;
        value += r.true_value.unwrap();
        assert!((r.cumulative_value.unwrap() - value).abs() < 1e-12);
        assert!(r.cumulative_cost <= trace.budget + 1e-12);
    }
    assert!((trace.total_cost() - cost).abs() < 1e-9 || trace.budget_kind == gp_select::selection::BudgetKind::Rounds);
}

#[test]
fn replays_a_dense_step_by_step_simulation() {
    let kernel = KernelSpec::Rbf { bandwidth: 0.25 };
    let (items, oracle) = synth_gp_itemset(30, 2, &kernel, 0.1, (1.0, 1.0), 11).unwrap();
    let schedule = BetaSchedule::Theoretical { r: 1.0, delta: 0.1 };
    let cfg = PolicyConfig::new(Rule::Uniform, schedule, 10.0, 0.1);
    let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &cfg).unwrap();

    let k = gram(&kernel, &items).unwrap();
    let ck: f64 = k
        .eigenvalues()
        .iter()
        .map(|l| 0.5 * (1.0 + l.max(0.0) / 0.01).ln())
        .sum();
    let mut replay = oracle.clone();
    let (mut observed, mut ys) = (Vec::new(), Vec::new());
    for t in 1..=10 {
        let beta = 2.0 + 300.0 * ck * (t as f64 / 0.1).ln().powi(3);
        let (mu, var) = dense_posterior(k.matrix(), &observed, &ys, 0.1);
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for v in 0..30 {
            if observed.contains(&v) {
                continue;
            }
            let s = mu[v] + beta.sqrt() * var[v].max(0.0).sqrt();
            if best.0 == usize::MAX || s > best.1 + 1e-9 * best.1.abs() {
                best = (v, s);
            }
        }
        let r = &trace.rounds[t - 1];
        assert_eq!(r.item, best.0, "round {t}");
        assert!((r.beta - beta).abs() < 1e-6 * beta);
        let y = replay.query(best.0).unwrap();
        assert_eq!(r.observed, y);
        observed.push(best.0);
        ys.push(y);
    }
    assert_eq!(trace.rounds.len(), 10);
}

#[test]
fn single_round_takes_the_largest_prior_ucb() {
    let kernel = KernelSpec::Linear;
    let (items, oracle, _) = random_instance(25, 3, (1.0, 1.0));
    let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &config(Rule::Uniform, 4.0, 1.0)).unwrap();
    let norms: Vec<f64> = items.items().iter().map(|i| i.features.iter().map(|x| x * x).sum()).collect();
    let best = (0..25).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
    assert_eq!(trace.selected(), vec![best]);
}

#[test]
fn full_budget_selects_everything() {
    let (items, oracle, kernel) = random_instance(15, 5, (1.0, 1.0));
    let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &config(Rule::Uniform, 2.0, 15.0)).unwrap();
    let mut sel = trace.selected();
    sel.sort_unstable();
    assert_eq!(sel, (0..15).collect::<Vec<_>>());
    let total: f64 = oracle.true_values().iter().sum();
    assert!((trace.total_value().unwrap() - total).abs() < 1e-9);
    assert_eq!(trace.leftover_budget, 0.0);
}

#[test]
fn cost_rules_stop_when_nothing_fits() {
    let (items, oracle, kernel) = random_instance(20, 8, (1.5, 3.0));
    for rule in [Rule::Cost, Rule::DiverseCost] {
        let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &config(rule, 1.0, 7.0)).unwrap();
        assert_well_formed(&trace);
        assert!(trace.total_cost() <= 7.0);
        let chosen = trace.selected();
        let min_left = (0..20)
            .filter(|v| !chosen.contains(v))
            .map(|v| items.cost(v))
            .fold(f64::INFINITY, f64::min);
        assert!(min_left > trace.leftover_budget);
        assert!((trace.leftover_budget - (7.0 - trace.total_cost())).abs() < 1e-12);
    }
}

#[test]
fn epsilon_first_explores_for_the_rounded_up_fraction() {
    let (items, oracle, kernel) = random_instance(40, 2, (1.0, 1.0));
    let cfg = config(Rule::Uniform, 1.0, 10.0);
    let eps = run_baseline(&items, &mut oracle.clone(), &kernel, Baseline::EpsilonFirst { fraction: 0.2 }, &cfg, 9).unwrap();
    let random = run_baseline(&items, &mut oracle.clone(), &kernel, Baseline::Random, &cfg, 9).unwrap();
    assert_eq!(eps.selected()[..2], random.selected()[..2]);

    let k = gram(&kernel, &items).unwrap();
    let (mut obs, mut ys) = (Vec::new(), Vec::new());
    for r in &eps.rounds {
        if r.round > 2 {
            let (mu, _) = dense_posterior(k.matrix(), &obs, &ys, cfg.noise);
            let best = (0..40)
                .filter(|v| !obs.contains(v))
                .max_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(r.item, best, "round {}", r.round);
        }
        obs.push(r.item);
        ys.push(r.observed);
    }
    assert_eq!(eps.rounds.len(), 10);
}

#[test]
fn pure_explore_starts_at_the_lowest_id_under_rbf() {
    let (items, oracle, kernel) = random_instance(30, 6, (1.0, 1.0));
    let t = run_baseline(&items, &mut oracle.clone(), &kernel, Baseline::PureExplore, &config(Rule::Uniform, 1.0, 3.0), 0).unwrap();
    assert_eq!(t.rounds[0].item, 0);
}

#[test]
fn full_diversity_weight_follows_the_diversity_greedy() {
    let (items, oracle, kernel) = random_instance(40, 12, (1.0, 1.0));
    let mut cfg = config(Rule::Diverse, 4.0, 12.0);
    cfg.lambda = 1.0;
    let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &cfg).unwrap();
    let cov = KernelCovariance::new(&kernel, &items).unwrap();
    let greedy = greedy_oracle(&cov, oracle.true_values(), 1.0, 0.15, None, 12.0).unwrap();
    assert_eq!(trace.selected(), greedy.sequence);
}

#[test]
fn invalid_configs_name_the_field() {
    let (items, oracle, kernel) = random_instance(5, 1, (1.0, 1.0));
    let mut cfg = config(Rule::Diverse, 1.0, 3.0);
    cfg.sigma_n = None;
    let err = run_gp_select(&items, &mut oracle.clone(), &kernel, &cfg).unwrap_err();
    assert!(err.to_string().contains("sigma_n"), "{err}");
    let bad = Baseline::EpsilonFirst { fraction: 1.0 };
    assert!(run_baseline(&items, &mut oracle.clone(), &kernel, bad, &config(Rule::Uniform, 1.0, 3.0), 0).is_err());
}

fn sequence(rule: Rule, seed: u64, beta: f64, lambda: f64, lazy: bool, costs: (f64, f64)) -> Vec<usize> {
    let (items, oracle, kernel) = random_instance(60, seed, costs);
    let mut cfg = config(rule, beta, 15.0);
    cfg.lambda = lambda;
    cfg.lazy = lazy;
    cfg.failsafe_threshold = Some(1 + (seed as usize % 5));
    let trace = run_gp_select(&items, &mut oracle.clone(), &kernel, &cfg).unwrap();
    assert_well_formed(&trace);
    trace.selected()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lazy_equals_naive(seed in 0u64..1000, beta in 0.0f64..20.0, lambda in 0.0f64..1.0) {
        for rule in [Rule::Uniform, Rule::Cost, Rule::Diverse, Rule::DiverseCost] {
            prop_assert_eq!(
                sequence(rule, seed, beta, lambda, true, (0.5, 2.0)),
                sequence(rule, seed, beta, lambda, false, (0.5, 2.0))
            );
        }
    }

    #[test]
    fn degenerate_rules_coincide(seed in 0u64..1000, beta in 0.0f64..20.0) {
        let uniform = sequence(Rule::Uniform, seed, beta, 0.0, true, (1.0, 1.0));
        prop_assert_eq!(&sequence(Rule::Diverse, seed, beta, 0.0, true, (1.0, 1.0)), &uniform);
        prop_assert_eq!(&sequence(Rule::Cost, seed, beta, 0.0, true, (1.0, 1.0)), &uniform);
        prop_assert_eq!(&sequence(Rule::DiverseCost, seed, beta, 0.0, true, (1.0, 1.0)), &uniform);
        prop_assert_eq!(
            sequence(Rule::DiverseCost, seed, beta, 0.6, false, (1.0, 1.0)),
            sequence(Rule::Diverse, seed, beta, 0.6, false, (1.0, 1.0))
        );
    }

    #[test]
    fn zero_beta_is_pure_exploitation(seed in 0u64..1000) {
        let (items, oracle, kernel) = random_instance(50, seed, (1.0, 1.0));
        let cfg = config(Rule::Uniform, 0.0, 12.0);
        let gp = run_gp_select(&items, &mut oracle.clone(), &kernel, &cfg).unwrap();
        let exploit = run_baseline(&items, &mut oracle.clone(), &kernel, Baseline::PureExploit, &cfg, seed).unwrap();
        prop_assert_eq!(gp.selected(), exploit.selected());
    }
}
