//! The selection loop and its decision rules.
//!
//! Every round refreshes the posterior means, scores the remaining
//! candidates with one of four rules and picks the maximiser (lowest id on
//! ties):
//!
//! | rule           | score                                            |
//! |----------------|--------------------------------------------------|
//! | `uniform`      | `μ + √β σ`                                       |
//! | `cost`         | `(μ + √β σ) / c_v`                               |
//! | `diverse`      | `(1-λ)(μ + √β σ) + λ Δ_D(v|S)`                   |
//! | `diverse_cost` | `((1-λ)(μ + √β σ) + λ Δ_D(v|S)) / c_v`           |
//!
//! Cost rules only consider items with `c_v <= B - C(S)` and stop once
//! nothing fits; the other rules spend one unit of budget per round.

mod baselines;
mod trace;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::{diversity_gain, DiversityState};
use crate::error::{Error, Result};
use crate::items::{FeedbackOracle, ItemSet};
use crate::kernels::{gram, information_constant, Covariance, KernelCovariance, KernelSpec};
use crate::lazy::LazyQueue;
use crate::posterior::PosteriorState;

pub use baselines::{run_baseline, run_baseline_on, Baseline};
pub use trace::{BudgetKind, RoundRecord, SelectionTrace};

/// Largest ground set for which `C_K` is computed from a dense Gram matrix.
pub const INFORMATION_CONSTANT_LIMIT: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Uniform,
    Cost,
    Diverse,
    DiverseCost,
}

impl Rule {
    pub fn uses_costs(self) -> bool {
        matches!(self, Rule::Cost | Rule::DiverseCost)
    }

    pub fn uses_diversity(self) -> bool {
        matches!(self, Rule::Diverse | Rule::DiverseCost)
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Uniform => "uniform",
            Rule::Cost => "cost",
            Rule::Diverse => "diverse",
            Rule::DiverseCost => "diverse_cost",
        }
    }
}

/// Exploration weight schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    /// `β_t = 2R + 300 C_K ln³(t/δ)`.
    Theoretical { r: f64, delta: f64 },
    /// The same as `Theoretical`, multiplied by `scale ∈ (0, 1]`.
    Scaled { r: f64, delta: f64, scale: f64 },
    Constant { value: f64 },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let theoretical = |r: f64, delta: f64| -> Result<()> {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::validation("beta.r", format!("must be positive, got {r}")));
            }
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::validation(
                    "beta.delta",
                    format!("must lie in (0, 1), got {delta}"),
                ));
            }
            Ok(())
        };
        match *self {
            BetaSchedule::Theoretical { r, delta } => theoretical(r, delta),
            BetaSchedule::Scaled { r, delta, scale } => {
                theoretical(r, delta)?;
                if !(scale > 0.0 && scale <= 1.0) {
                    return Err(Error::validation(
                        "beta.scale",
                        format!("must lie in (0, 1], got {scale}"),
                    ));
                }
                Ok(())
            }
            BetaSchedule::Constant { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::validation(
                        "beta.value",
                        format!("must be non-negative, got {value}"),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn needs_information_constant(&self) -> bool {
        !matches!(self, BetaSchedule::Constant { .. })
    }
}

/// `β_t` for round `t >= 1`; `information_constant` is ignored by the
/// constant schedule.
pub fn beta(t: usize, schedule: &BetaSchedule, information_constant: f64) -> Result<f64> {
    if t < 1 {
        return Err(Error::validation("t", "rounds are numbered from 1"));
    }
    schedule.validate()?;
    let theoretical = |r: f64, delta: f64| {
        2.0 * r + 300.0 * information_constant * (t as f64 / delta).ln().powi(3)
    };
    Ok(match *schedule {
        BetaSchedule::Theoretical { r, delta } => theoretical(r, delta),
        BetaSchedule::Scaled { r, delta, scale } => scale * theoretical(r, delta),
        BetaSchedule::Constant { value } => value,
    })
}

fn default_lazy() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub rule: Rule,
    /// Value/diversity tradeoff in `[0, 1]`.
    #[serde(default)]
    pub lambda: f64,
    /// Noise scale of the diversity term. Required by diverse rules; when
    /// set for other rules the trace still reports `D(S)`.
    #[serde(default)]
    pub sigma_n: Option<f64>,
    pub beta: BetaSchedule,
    /// Number of rounds for `uniform`/`diverse`, total cost otherwise.
    pub budget: f64,
    /// Observation noise scale σ̂ assumed by the posterior.
    pub noise: f64,
    #[serde(default = "default_lazy")]
    pub lazy: bool,
    /// Variance refreshes allowed per round before the lazy scheduler
    /// falls back to a full update. Defaults to `ceil(0.05 n)`.
    #[serde(default)]
    pub failsafe_threshold: Option<usize>,
}

impl PolicyConfig {
    pub fn new(rule: Rule, beta: BetaSchedule, budget: f64, noise: f64) -> Self {
        PolicyConfig {
            rule,
            lambda: 0.0,
            sigma_n: None,
            beta,
            budget,
            noise,
            lazy: true,
            failsafe_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(
                "lambda",
                format!("must lie in [0, 1], got {}", self.lambda),
            ));
        }
        if let Some(s) = self.sigma_n {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("sigma_n", format!("must be positive, got {s}")));
            }
        } else if self.rule.uses_diversity() {
            return Err(Error::validation(
                "sigma_n",
                format!("rule {} needs sigma_n", self.rule.name()),
            ));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::validation(
                "budget",
                format!("must be positive, got {}", self.budget),
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::validation(
                "noise",
                format!("must be positive, got {}", self.noise),
            ));
        }
        if self.failsafe_threshold == Some(0) {
            return Err(Error::validation("failsafe_threshold", "must be at least 1"));
        }
        self.beta.validate()
    }

    pub fn failsafe_for(&self, n: usize) -> usize {
        self.failsafe_threshold
            .unwrap_or_else(|| ((0.05 * n as f64).ceil() as usize).max(1))
    }

    pub fn budget_kind(&self) -> BudgetKind {
        if self.rule.uses_costs() {
            BudgetKind::Cost
        } else {
            BudgetKind::Rounds
        }
    }
}

/// Remaining budget in rounds or cost units.
#[derive(Clone, Debug)]
pub(crate) struct BudgetTracker {
    kind: BudgetKind,
    total: f64,
    spent: f64,
}

impl BudgetTracker {
    pub fn new(kind: BudgetKind, total: f64) -> Self {
        let total = match kind {
            BudgetKind::Rounds => total.floor(),
            BudgetKind::Cost => total,
        };
        BudgetTracker {
            kind,
            total,
            spent: 0.0,
        }
    }

    pub fn left(&self) -> f64 {
        self.total - self.spent
    }

    /// Budget charged for picking an item of cost `cost`.
    pub fn charge(&self, cost: f64) -> f64 {
        match self.kind {
            BudgetKind::Rounds => 1.0,
            BudgetKind::Cost => cost,
        }
    }

    pub fn fits(&self, cost: f64) -> bool {
        self.charge(cost) <= self.left()
    }

    pub fn spend(&mut self, cost: f64) -> f64 {
        self.spent += self.charge(cost);
        self.spent
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }
}

/// Rule score from the posterior mean, the two predictive variances and
/// the item cost. Monotone non-decreasing in both variances.
#[derive(Clone, Copy, Debug)]
pub struct RuleScore {
    pub rule: Rule,
    pub lambda: f64,
    pub sqrt_beta: f64,
    pub sigma_n: f64,
}

impl RuleScore {
    #[inline]
    pub fn score(&self, mean: f64, var: f64, div_var: f64, cost: f64) -> f64 {
        let ucb = mean + self.sqrt_beta * var.sqrt();
        let value = if self.rule.uses_diversity() {
            (1.0 - self.lambda) * ucb + self.lambda * diversity_gain(div_var, self.sigma_n)
        } else {
            ucb
        };
        if self.rule.uses_costs() {
            value / cost
        } else {
            value
        }
    }
}

/// Predictive variances of one candidate under the current state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fresh {
    pub var: f64,
    pub div_var: f64,
}

/// Winner of one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pick {
    pub item: usize,
    pub score: f64,
    /// Variance refreshes spent choosing it.
    pub recomputations: usize,
}

/// Everything needed to score candidates in one round. Means are computed
/// once, at construction.
pub struct RoundView<'r, 'a, C: Covariance + ?Sized> {
    pub posterior: &'r PosteriorState<'a, C>,
    pub diversity: Option<&'r DiversityState<'a, C>>,
    pub means: Vec<f64>,
    pub scorer: RuleScore,
    pub costs: Option<&'r [f64]>,
}

impl<'r, 'a, C: Covariance + ?Sized> RoundView<'r, 'a, C> {
    pub fn new(
        posterior: &'r PosteriorState<'a, C>,
        diversity: Option<&'r DiversityState<'a, C>>,
        scorer: RuleScore,
        costs: Option<&'r [f64]>,
    ) -> Self {
        RoundView {
            posterior,
            diversity,
            means: posterior.means(),
            scorer,
            costs,
        }
    }

    /// Both factors see the same items under the same noise, so the
    /// diversity variance equals the model variance bit for bit.
    fn shares_factor(&self) -> bool {
        self.diversity
            .is_some_and(|d| d.sigma_n() == self.posterior.noise())
    }

    pub fn prior(&self, v: usize) -> Fresh {
        let k = self.posterior.covariance().diagonal(v);
        Fresh { var: k, div_var: k }
    }

    pub fn fresh(&self, v: usize, scratch: &mut Vec<f64>) -> Result<Fresh> {
        let var = self.posterior.variance_with(v, scratch)?;
        let div_var = match self.diversity {
            Some(_) if self.shares_factor() => var,
            Some(d) => d.conditional_variance_with(v, scratch)?,
            None => var,
        };
        Ok(Fresh { var, div_var })
    }

    #[inline]
    pub fn score(&self, v: usize, f: Fresh) -> f64 {
        let cost = self.costs.map_or(1.0, |c| c[v]);
        self.scorer.score(self.means[v], f.var, f.div_var, cost)
    }

    pub fn fresh_all(&self, candidates: &[usize]) -> Result<Vec<Fresh>> {
        candidates
            .par_iter()
            .map_init(Vec::new, |scratch, &v| self.fresh(v, scratch))
            .collect()
    }

    /// Full recomputation and exact argmax, ties to the lowest id.
    pub fn exhaustive(&self, candidates: &[usize]) -> Result<Option<Pick>> {
        let fresh = self.fresh_all(candidates)?;
        Ok(argmax(
            candidates.iter().zip(&fresh).map(|(&v, &f)| (v, self.score(v, f))),
        )
        .map(|(item, score)| Pick {
            item,
            score,
            recomputations: candidates.len(),
        }))
    }
}

/// Maximum score with ties broken towards the lowest id, independent of
/// iteration order.
pub(crate) fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    scores.fold(None, |best, (v, s)| match best {
        None => Some((v, s)),
        Some((bv, bs)) => {
            if s > bs || (s == bs && v < bv) {
                Some((v, s))
            } else {
                Some((bv, bs))
            }
        }
    })
}

fn ensure_unobserved<C: Covariance + ?Sized>(
    post: &PosteriorState<'_, C>,
    remaining: &[usize],
) -> Result<()> {
    for &v in remaining {
        if v >= post.n() {
            return Err(Error::Index {
                index: v,
                len: post.n(),
            });
        }
        if post.is_observed(v) {
            return Err(Error::Contract(format!("item {v} was already selected")));
        }
    }
    Ok(())
}

impl RuleScore {
    /// Checked constructor; `sigma_n` only matters for diverse rules.
    pub fn new(rule: Rule, beta_t: f64, lambda: f64, sigma_n: f64) -> Result<Self> {
        scorer(rule, beta_t, lambda, sigma_n)
    }
}

fn scorer(rule: Rule, beta_t: f64, lambda: f64, sigma_n: f64) -> Result<RuleScore> {
    if !(beta_t >= 0.0) {
        return Err(Error::validation("beta", format!("must be non-negative, got {beta_t}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::validation("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    Ok(RuleScore {
        rule,
        lambda,
        sqrt_beta: beta_t.sqrt(),
        sigma_n,
    })
}

fn feasible(remaining: &[usize], costs: &[f64], budget_left: f64) -> Vec<usize> {
    remaining
        .iter()
        .copied()
        .filter(|&v| costs[v] <= budget_left)
        .collect()
}

/// Maximiser of `μ + √β σ`. `None` when `remaining` is empty.
pub fn select_next_uniform<C: Covariance + ?Sized>(
    post: &PosteriorState<'_, C>,
    remaining: &[usize],
    beta_t: f64,
) -> Result<Option<usize>> {
    ensure_unobserved(post, remaining)?;
    let view = RoundView::new(post, None, scorer(Rule::Uniform, beta_t, 0.0, 1.0)?, None);
    Ok(view.exhaustive(remaining)?.map(|p| p.item))
}

/// Maximiser of `(μ + √β σ) / c_v` among items with `c_v <= budget_left`.
pub fn select_next_cost<C: Covariance + ?Sized>(
    post: &PosteriorState<'_, C>,
    remaining: &[usize],
    beta_t: f64,
    costs: &[f64],
    budget_left: f64,
) -> Result<Option<usize>> {
    ensure_unobserved(post, remaining)?;
    let candidates = feasible(remaining, costs, budget_left);
    let view = RoundView::new(post, None, scorer(Rule::Cost, beta_t, 0.0, 1.0)?, Some(costs));
    Ok(view.exhaustive(&candidates)?.map(|p| p.item))
}

/// Maximiser of `(1-λ)(μ + √β σ) + λ Δ_D(v|S)`.
pub fn select_next_diverse<C: Covariance + ?Sized>(
    post: &PosteriorState<'_, C>,
    diversity: &DiversityState<'_, C>,
    remaining: &[usize],
    beta_t: f64,
    lambda: f64,
) -> Result<Option<usize>> {
    ensure_unobserved(post, remaining)?;
    let s = scorer(Rule::Diverse, beta_t, lambda, diversity.sigma_n())?;
    let view = RoundView::new(post, Some(diversity), s, None);
    Ok(view.exhaustive(remaining)?.map(|p| p.item))
}

/// Maximiser of the diverse score divided by `c_v`, among affordable items.
pub fn select_next_diverse_cost<C: Covariance + ?Sized>(
    post: &PosteriorState<'_, C>,
    diversity: &DiversityState<'_, C>,
    remaining: &[usize],
    beta_t: f64,
    lambda: f64,
    costs: &[f64],
    budget_left: f64,
) -> Result<Option<usize>> {
    ensure_unobserved(post, remaining)?;
    let candidates = feasible(remaining, costs, budget_left);
    let s = scorer(Rule::DiverseCost, beta_t, lambda, diversity.sigma_n())?;
    let view = RoundView::new(post, Some(diversity), s, Some(costs));
    Ok(view.exhaustive(&candidates)?.map(|p| p.item))
}

/// Runs the selection loop over `items`, building kernel columns on demand.
pub fn run_gp_select(
    items: &ItemSet,
    oracle: &mut FeedbackOracle,
    kernel: &KernelSpec,
    config: &PolicyConfig,
) -> Result<SelectionTrace> {
    config.validate()?;
    let cov = KernelCovariance::new(kernel, items)?;
    let ck = if config.beta.needs_information_constant() {
        if items.len() > INFORMATION_CONSTANT_LIMIT {
            return Err(Error::validation(
                "beta",
                format!(
                    "theoretical schedules need C_K, which is not computed above {INFORMATION_CONSTANT_LIMIT} items; \
                     pass it to run_gp_select_on or use a constant schedule"
                ),
            ));
        }
        Some(information_constant(&gram(kernel, items)?, config.noise)?)
    } else {
        None
    };
    run_gp_select_on(&cov, items, oracle, config, ck)
}

/// [`run_gp_select`] against an arbitrary covariance source, with `C_K`
/// supplied by the caller when the β schedule needs it.
pub fn run_gp_select_on<C: Covariance + ?Sized>(
    cov: &C,
    items: &ItemSet,
    oracle: &mut FeedbackOracle,
    config: &PolicyConfig,
    information_constant: Option<f64>,
) -> Result<SelectionTrace> {
    config.validate()?;
    let n = items.len();
    if cov.len() != n || oracle.len() != n {
        return Err(Error::validation(
            "items",
            format!(
                "size mismatch: {n} items, covariance over {}, oracle over {}",
                cov.len(),
                oracle.len()
            ),
        ));
    }
    let ck = match (config.beta.needs_information_constant(), information_constant) {
        (true, None) => {
            return Err(Error::validation("beta", "schedule needs the information constant C_K"))
        }
        (_, c) => c.unwrap_or(0.0),
    };
    let costs = items.costs();
    let mut posterior = PosteriorState::new(cov, config.noise)?;
    let mut diversity = config
        .sigma_n
        .map(|s| DiversityState::new(cov, s))
        .transpose()?;
    let mut budget = BudgetTracker::new(config.budget_kind(), config.budget);
    let mut lazy = config
        .lazy
        .then(|| LazyQueue::new(n, config.failsafe_for(n)));
    let mut trace = SelectionTrace::new(
        format!("gp_select:{}", config.rule.name()),
        config.budget_kind(),
        config.budget,
    );
    let mut remaining: Vec<usize> = (0..n).collect();

    for t in 1.. {
        remaining.retain(|&v| budget.fits(costs[v]));
        if remaining.is_empty() {
            break;
        }
        let start = Instant::now();
        let beta_t = beta(t, &config.beta, ck)?;
        let scorer = RuleScore {
            rule: config.rule,
            lambda: config.lambda,
            sqrt_beta: beta_t.sqrt(),
            sigma_n: config.sigma_n.unwrap_or(1.0),
        };
        let div = if config.rule.uses_diversity() {
            diversity.as_ref()
        } else {
            None
        };
        let view = RoundView::new(
            &posterior,
            div,
            scorer,
            config.rule.uses_costs().then_some(costs.as_slice()),
        );
        let pick = match lazy.as_mut() {
            Some(queue) => queue.lazy_select(&view, &remaining)?,
            None => view.exhaustive(&remaining)?,
        };
        drop(view);
        let Some(pick) = pick else { break };
        let v = pick.item;
        let y = oracle.query(v)?;
        posterior.update(v, y)?;
        let gain = diversity.as_mut().map(|d| d.commit(v)).transpose()?;
        let spent = budget.spend(costs[v]);
        let pos = remaining.binary_search(&v).expect("picked item is a candidate");
        remaining.remove(pos);
        trace.push(
            RoundRecord {
                round: t,
                item: v,
                score: pick.score,
                beta: beta_t,
                observed: y,
                cost: costs[v],
                cumulative_cost: spent,
                true_value: Some(oracle.true_value(v)),
                cumulative_value: None,
                diversity_gain: gain,
                cumulative_diversity: diversity.as_ref().map(|d| d.cumulative()),
                recomputations: pick.recomputations,
                wall_nanos: start.elapsed().as_nanos() as u64,
            },
        );
    }
    trace.finish(budget.left());
    Ok(trace)
}
