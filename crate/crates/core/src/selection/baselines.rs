//! Reference policies: random, pure exploration, pure exploitation and
//! epsilon-first (random rounds, then GP exploitation).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, BudgetTracker, PolicyConfig, RoundRecord, SelectionTrace};
use crate::diversity::DiversityState;
use crate::error::{Error, Result};
use crate::items::{FeedbackOracle, ItemSet};
use crate::kernels::{Covariance, KernelCovariance, KernelSpec};
use crate::posterior::PosteriorState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Random,
    /// Largest posterior variance.
    PureExplore,
    /// Largest posterior mean.
    PureExploit,
    /// Random for the first `fraction` of the budget, then pure exploitation.
    EpsilonFirst { fraction: f64 },
}

impl Baseline {
    pub fn name(&self) -> String {
        match self {
            Baseline::Random => "random".into(),
            Baseline::PureExplore => "pure_explore".into(),
            Baseline::PureExploit => "pure_exploit".into(),
            Baseline::EpsilonFirst { fraction } => format!("epsilon_first:{fraction}"),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Baseline::EpsilonFirst { fraction } = *self {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::validation(
                    "fraction",
                    format!("epsilon_first fraction must lie in (0, 1), got {fraction}"),
                ));
            }
        }
        Ok(())
    }
}

/// Runs a baseline with the budget semantics, noise scale and diversity
/// tracking of `config`; `seed` drives the random choices.
pub fn run_baseline(
    items: &ItemSet,
    oracle: &mut FeedbackOracle,
    kernel: &KernelSpec,
    which: Baseline,
    config: &PolicyConfig,
    seed: u64,
) -> Result<SelectionTrace> {
    let cov = KernelCovariance::new(kernel, items)?;
    run_baseline_on(&cov, items, oracle, which, config, seed)
}

pub fn run_baseline_on<C: Covariance + ?Sized>(
    cov: &C,
    items: &ItemSet,
    oracle: &mut FeedbackOracle,
    which: Baseline,
    config: &PolicyConfig,
    seed: u64,
) -> Result<SelectionTrace> {
    config.validate()?;
    which.validate()?;
    let n = items.len();
    if cov.len() != n || oracle.len() != n {
        return Err(Error::validation("items", "size mismatch between items, covariance and oracle"));
    }
    let costs = items.costs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posterior = PosteriorState::new(cov, config.noise)?;
    let mut diversity = config
        .sigma_n
        .map(|s| DiversityState::new(cov, s))
        .transpose()?;
    let mut budget = BudgetTracker::new(config.budget_kind(), config.budget);
    let explore_until = match which {
        Baseline::EpsilonFirst { fraction } => match config.budget_kind() {
            super::BudgetKind::Rounds => (fraction * budget.left()).ceil(),
            super::BudgetKind::Cost => fraction * budget.left(),
        },
        _ => 0.0,
    };
    let mut trace = SelectionTrace::new(which.name(), config.budget_kind(), config.budget);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut scratch = Vec::new();

    for t in 1.. {
        remaining.retain(|&v| budget.fits(costs[v]));
        if remaining.is_empty() {
            break;
        }
        let start = Instant::now();
        let random_phase = match which {
            Baseline::Random => true,
            Baseline::EpsilonFirst { .. } => budget.spent() < explore_until,
            _ => false,
        };
        let (v, score, recomputations) = if random_phase {
            (remaining[rng.random_range(0..remaining.len())], 0.0, 0)
        } else if which == Baseline::PureExplore {
            let scores = remaining
                .iter()
                .map(|&v| posterior.variance_with(v, &mut scratch).map(|s| (v, s)))
                .collect::<Result<Vec<_>>>()?;
            let (v, s) = argmax(scores.into_iter()).expect("non-empty");
            (v, s, remaining.len())
        } else {
            let means = posterior.means();
            let (v, s) = argmax(remaining.iter().map(|&v| (v, means[v]))).expect("non-empty");
            (v, s, 0)
        };
        let y = oracle.query(v)?;
        posterior.update(v, y)?;
        let gain = diversity.as_mut().map(|d| d.commit(v)).transpose()?;
        let spent = budget.spend(costs[v]);
        let pos = remaining.binary_search(&v).expect("candidate");
        remaining.remove(pos);
        trace.push(RoundRecord {
            round: t,
            item: v,
            score,
            beta: 0.0,
            observed: y,
            cost: costs[v],
            cumulative_cost: spent,
            true_value: Some(oracle.true_value(v)),
            cumulative_value: None,
            diversity_gain: gain,
            cumulative_diversity: diversity.as_ref().map(|d| d.cumulative()),
            recomputations,
            wall_nanos: start.elapsed().as_nanos() as u64,
        });
    }
    trace.finish(budget.left());
    Ok(trace)
}
