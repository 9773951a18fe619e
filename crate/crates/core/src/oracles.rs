//! Full-knowledge references used to measure regret.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diversity::DiversityState;
use crate::error::{Error, Result};
use crate::kernels::{half_log_det_shifted, information_constant, Covariance, GramMatrix};
use crate::selection::{argmax, BudgetKind, SelectionTrace};

/// Largest ground set handled by subset enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 20;
/// Largest ground set for which `γ_B` is enumerated exactly.
pub const INFO_GAIN_ENUMERATION_LIMIT: usize = 15;
const DP_CELL_LIMIT: usize = 200_000_000;

/// `1 - 1/e`.
pub const GREEDY_FACTOR: f64 = 1.0 - 1.0 / std::f64::consts::E;

fn check_knapsack(values: &[f64], costs: &[f64]) -> Result<()> {
    if values.len() != costs.len() {
        return Err(Error::validation(
            "costs",
            format!("{} values but {} costs", values.len(), costs.len()),
        ));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::validation("values", format!("must be non-negative, got {v}")));
    }
    if let Some(c) = costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::validation("costs", format!("must be positive, got {c}")));
    }
    Ok(())
}

/// 0/1 knapsack by dynamic programming over costs rounded up to multiples
/// of `resolution`. Exact for integer costs at resolution 1; otherwise the
/// returned subset is feasible and its value a lower bound on the optimum.
pub fn knapsack_dp(
    values: &[f64],
    costs: &[f64],
    budget: f64,
    resolution: f64,
) -> Result<(Vec<usize>, f64)> {
    check_knapsack(values, costs)?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::validation(
            "resolution",
            format!("must be positive, got {resolution}"),
        ));
    }
    let n = values.len();
    let capacity = if budget > 0.0 {
        (budget / resolution + 1e-9).floor() as usize
    } else {
        0
    };
    if (n + 1).saturating_mul(capacity + 1) > DP_CELL_LIMIT {
        return Err(Error::validation(
            "resolution",
            format!("{n} items x {capacity} cost cells is too large; coarsen the resolution"),
        ));
    }
    let weights: Vec<usize> = costs
        .iter()
        .map(|c| ((c / resolution - 1e-9).ceil() as usize).max(1))
        .collect();
    let width = capacity + 1;
    let mut best = vec![0.0f64; width];
    let mut take = vec![false; n * width];
    for (i, (&w, &v)) in weights.iter().zip(values).enumerate() {
        if w > capacity {
            continue;
        }
        for cap in (w..=capacity).rev() {
            let with = best[cap - w] + v;
            if with > best[cap] {
                best[cap] = with;
                take[i * width + cap] = true;
            }
        }
    }
    let mut subset = Vec::new();
    let mut cap = capacity;
    for i in (0..n).rev() {
        if take[i * width + cap] {
            subset.push(i);
            cap -= weights[i];
        }
    }
    subset.reverse();
    let total = subset.iter().map(|&i| values[i]).sum();
    Ok((subset, total))
}

/// True knapsack optimum by enumerating all subsets (at most 20 items).
pub fn exhaustive_opt(values: &[f64], costs: &[f64], budget: f64) -> Result<(Vec<usize>, f64)> {
    check_knapsack(values, costs)?;
    let n = values.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::validation(
            "n",
            format!("exhaustive search is limited to {EXHAUSTIVE_LIMIT} items, got {n}"),
        ));
    }
    let mut best = (0u32, 0.0f64);
    for mask in 1u32..(1u32 << n) {
        let (mut cost, mut value) = (0.0, 0.0);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                cost += costs[i];
                value += values[i];
            }
        }
        if cost <= budget && value > best.1 {
            best = (mask, value);
        }
    }
    let subset: Vec<usize> = (0..n).filter(|i| best.0 & (1 << i) != 0).collect();
    let total = subset.iter().map(|&i| values[i]).sum();
    Ok((subset, total))
}

/// Better of the density-greedy packing and the single most valuable
/// affordable item; within a factor 2 of the knapsack optimum.
pub fn knapsack_half_approx(values: &[f64], costs: &[f64], budget: f64) -> Result<(Vec<usize>, f64)> {
    check_knapsack(values, costs)?;
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| costs[i] <= budget).collect();
    order.sort_by(|&a, &b| {
        (values[b] / costs[b])
            .total_cmp(&(values[a] / costs[a]))
            .then(a.cmp(&b))
    });
    let (mut greedy, mut spent, mut total) = (Vec::new(), 0.0, 0.0);
    for i in order.iter().copied() {
        if costs[i] <= budget - spent {
            greedy.push(i);
            spent += costs[i];
            total += values[i];
        }
    }
    let single = argmax(order.iter().map(|&i| (i, values[i])));
    match single {
        Some((i, v)) if v > total => Ok((vec![i], v)),
        _ => {
            greedy.sort_unstable();
            Ok((greedy, total))
        }
    }
}

/// Combined objective `(1-λ) Σ f + λ D(S)`.
pub fn objective(sum_values: f64, diversity: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * sum_values + lambda * diversity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    pub sequence: Vec<usize>,
    /// `Σ f(v)` over the sequence.
    pub value: f64,
    /// `D(S)` of the sequence.
    pub diversity: f64,
    /// `(1-λ) value + λ diversity`.
    pub objective: f64,
}

/// Greedy maximisation of `(1-λ) Σ f + λ D` with `f` known.
///
/// Without costs the budget counts items. With costs each step maximises
/// gain per unit cost among items that still fit.
pub fn greedy_oracle<C: Covariance + ?Sized>(
    cov: &C,
    values: &[f64],
    lambda: f64,
    sigma_n: f64,
    costs: Option<&[f64]>,
    budget: f64,
) -> Result<GreedyResult> {
    let n = values.len();
    if cov.len() != n || costs.is_some_and(|c| c.len() != n) {
        return Err(Error::validation("values", "size mismatch with covariance or costs"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::validation("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    let mut div = DiversityState::new(cov, sigma_n)?;
    let mut left = match costs {
        Some(_) => budget,
        None => budget.floor(),
    };
    let charge = |v: usize| costs.map_or(1.0, |c| c[v]);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut sequence = Vec::new();
    let mut value = 0.0;
    loop {
        remaining.retain(|&v| charge(v) <= left);
        let scored = remaining
            .iter()
            .map(|&v| {
                let gain = (1.0 - lambda) * values[v] + lambda * div.marginal_gain(v)?;
                Ok((v, if costs.is_some() { gain / charge(v) } else { gain }))
            })
            .collect::<Result<Vec<_>>>()?;
        let Some((v, _)) = argmax(scored.into_iter()) else { break };
        div.commit(v)?;
        value += values[v];
        left -= charge(v);
        sequence.push(v);
        remaining.retain(|&x| x != v);
    }
    let diversity = div.cumulative();
    Ok(GreedyResult {
        sequence,
        value,
        diversity,
        objective: objective(value, diversity, lambda),
    })
}

/// Exact maximiser of `(1-λ) Σ f + λ D` under the budget, by enumeration.
pub fn exhaustive_objective_opt(
    gram: &GramMatrix,
    values: &[f64],
    lambda: f64,
    sigma_n: f64,
    costs: Option<&[f64]>,
    budget: f64,
) -> Result<(Vec<usize>, f64)> {
    let n = values.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::validation(
            "n",
            format!("exhaustive search is limited to {EXHAUSTIVE_LIMIT} items, got {n}"),
        ));
    }
    if gram.n() != n {
        return Err(Error::validation("values", "size mismatch with Gram matrix"));
    }
    let scale = 1.0 / (sigma_n * sigma_n);
    let mut best = (Vec::new(), 0.0f64);
    for mask in 1u32..(1u32 << n) {
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let spent = match costs {
            Some(c) => subset.iter().map(|&i| c[i]).sum(),
            None => subset.len() as f64,
        };
        if spent > budget {
            continue;
        }
        let sum: f64 = subset.iter().map(|&i| values[i]).sum();
        let f = objective(sum, half_log_det_shifted(&gram.submatrix(&subset), scale), lambda);
        if f > best.1 {
            best = (subset, f);
        }
    }
    Ok(best)
}

/// Estimate of `γ_B = max_{|S| <= B} ½ log |I + σ̂⁻² K_S|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoGain {
    /// Best known lower bound; the exact value when `exact`.
    pub lower: f64,
    /// `C_K`, or the exact value when `exact`.
    pub upper: f64,
    /// Value reached by greedy selection.
    pub greedy: f64,
    pub exact: bool,
}

pub fn max_info_gain(gram: &GramMatrix, noise: f64, budget: usize) -> Result<InfoGain> {
    let n = gram.n();
    if budget > n {
        return Err(Error::validation(
            "budget",
            format!("B = {budget} exceeds the {n} available items"),
        ));
    }
    let ck = information_constant(gram, noise)?;
    let greedy = greedy_oracle(gram, &vec![0.0; n], 1.0, noise, None, budget as f64)?.diversity;
    if budget == 0 {
        return Ok(InfoGain { lower: 0.0, upper: 0.0, greedy: 0.0, exact: true });
    }
    if budget == n {
        return Ok(InfoGain { lower: ck, upper: ck, greedy, exact: true });
    }
    if n > INFO_GAIN_ENUMERATION_LIMIT {
        return Ok(InfoGain { lower: greedy, upper: ck, greedy, exact: false });
    }
    let scale = 1.0 / (noise * noise);
    let mut best = 0.0f64;
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > budget {
            continue;
        }
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        best = best.max(half_log_det_shifted(&gram.submatrix(&subset), scale));
    }
    Ok(InfoGain { lower: best, upper: best, greedy, exact: true })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretMode {
    /// `R_B = F(S*_B) - F(S_B)` with `F = Σ f`.
    Value,
    /// `R_B = (1 - 1/e) F(S*_B) - F(S_B)` with `F = (1-λ) Σ f + λ D`.
    GreedyRelative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub budget: f64,
    /// `F(S_B)` of the evaluated policy.
    pub achieved: f64,
    /// Benchmark the policy is compared against.
    pub oracle: f64,
    /// `oracle - achieved`.
    pub regret: f64,
    /// `regret / budget`.
    pub average_regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub mode: RegretMode,
    pub rows: Vec<RegretRow>,
}

impl RegretReport {
    pub const CSV_HEADER: &'static str = "B,F_S,oracle,R_B,avg_regret";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.budget, r.achieved, r.oracle, r.regret, r.average_regret
            )?;
        }
        Ok(())
    }
}

/// Ground truth needed by [`regret_curve`].
#[derive(Clone, Copy, Debug)]
pub struct RegretInputs<'a, C: Covariance + ?Sized> {
    /// True utility `f`.
    pub values: &'a [f64],
    pub costs: &'a [f64],
    /// Required in greedy-relative mode.
    pub covariance: Option<&'a C>,
    pub lambda: f64,
    pub sigma_n: Option<f64>,
    /// Cost grid for the knapsack DP on large instances.
    pub resolution: f64,
}

/// Regret of a trace at each budget checkpoint.
///
/// The trace prefix at budget `B` is every round whose cumulative cost is
/// at most `B`. In value mode the benchmark is the knapsack optimum (top-B
/// values for round budgets). In greedy-relative mode it is
/// `(1-1/e) F(S*_B)` for instances small enough to enumerate and the greedy
/// value `F(S'_B)`, itself at least that large, otherwise.
pub fn regret_curve<C: Covariance + ?Sized>(
    trace: &SelectionTrace,
    mode: RegretMode,
    inputs: &RegretInputs<'_, C>,
    checkpoints: &[f64],
) -> Result<RegretReport> {
    let n = inputs.values.len();
    if inputs.costs.len() != n {
        return Err(Error::validation("costs", "size mismatch with values"));
    }
    let truths = trace
        .rounds
        .iter()
        .map(|r| {
            r.true_value.ok_or_else(|| {
                Error::validation("trace", format!("round {} has no true value", r.round))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some(r) = trace.rounds.iter().find(|r| r.item >= n) {
        return Err(Error::Index { index: r.item, len: n });
    }
    let costs = match trace.budget_kind {
        BudgetKind::Rounds => None,
        BudgetKind::Cost => Some(inputs.costs),
    };
    let (cov, sigma_n) = match mode {
        RegretMode::Value => (None, 1.0),
        RegretMode::GreedyRelative => (
            Some(inputs.covariance.ok_or_else(|| {
                Error::validation("covariance", "greedy-relative regret needs the kernel")
            })?),
            inputs.sigma_n.ok_or_else(|| {
                Error::validation("sigma_n", "greedy-relative regret needs sigma_n")
            })?,
        ),
    };
    let dense = match cov {
        Some(c) if n <= EXHAUSTIVE_LIMIT => Some(GramMatrix::from_matrix(DMatrix::from_fn(
            n,
            n,
            |i, j| c.entry(i, j),
        ))?),
        _ => None,
    };

    let mut rows = Vec::with_capacity(checkpoints.len());
    for &budget in checkpoints {
        if !(budget > 0.0) {
            return Err(Error::validation("checkpoints", format!("must be positive, got {budget}")));
        }
        let prefix = trace
            .rounds
            .iter()
            .take_while(|r| r.cumulative_cost <= budget)
            .count();
        let sum_f: f64 = truths[..prefix].iter().sum();
        let (achieved, oracle) = match (mode, cov) {
            (RegretMode::Value, _) => {
                let best = match costs {
                    None => {
                        let mut sorted = inputs.values.to_vec();
                        sorted.sort_by(|a, b| b.total_cmp(a));
                        sorted.iter().take(budget.floor() as usize).sum()
                    }
                    Some(c) if n <= EXHAUSTIVE_LIMIT => exhaustive_opt(inputs.values, c, budget)?.1,
                    Some(c) => knapsack_dp(inputs.values, c, budget, inputs.resolution)?.1,
                };
                (sum_f, best)
            }
            (RegretMode::GreedyRelative, Some(c)) => {
                let mut div = DiversityState::new(c, sigma_n)?;
                for r in &trace.rounds[..prefix] {
                    div.commit(r.item)?;
                }
                let achieved = objective(sum_f, div.cumulative(), inputs.lambda);
                let benchmark = match &dense {
                    Some(g) => {
                        GREEDY_FACTOR
                            * exhaustive_objective_opt(g, inputs.values, inputs.lambda, sigma_n, costs, budget)?.1
                    }
                    None => greedy_oracle(c, inputs.values, inputs.lambda, sigma_n, costs, budget)?.objective,
                };
                (achieved, benchmark)
            }
            (RegretMode::GreedyRelative, None) => unreachable!(),
        };
        let regret = oracle - achieved;
        rows.push(RegretRow {
            budget,
            achieved,
            oracle,
            regret,
            average_regret: regret / budget,
        });
    }
    Ok(RegretReport { mode, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knapsack_textbook_instance() {
        let (subset, value) = knapsack_dp(&[3.0, 4.0, 5.0], &[2.0, 3.0, 4.0], 5.0, 1.0).unwrap();
        assert_eq!(subset, vec![0, 1]);
        assert_eq!(value, 7.0);
        // enumeration oracle over the 8 subsets
        let (ex, ev) = exhaustive_opt(&[3.0, 4.0, 5.0], &[2.0, 3.0, 4.0], 5.0).unwrap();
        assert_eq!((ex, ev), (vec![0, 1], 7.0));
    }

    #[test]
    fn knapsack_slack_and_starved_budgets() {
        let v = [1.0, 2.0, 3.0];
        let c = [1.0, 2.0, 3.0];
        assert_eq!(knapsack_dp(&v, &c, 100.0, 1.0).unwrap(), (vec![0, 1, 2], 6.0));
        assert_eq!(knapsack_dp(&v, &c, 0.5, 1.0).unwrap(), (vec![], 0.0));
        assert!(knapsack_dp(&[-1.0], &[1.0], 1.0, 1.0).is_err());
        assert!(knapsack_dp(&[1.0], &[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn knapsack_rounds_costs_up() {
        // cost 1.2 becomes 2 grid cells at resolution 1, so only one fits in 3
        let (subset, value) = knapsack_dp(&[1.0, 1.0], &[1.2, 1.2], 3.0, 1.0).unwrap();
        assert_eq!(subset.len(), 1);
        assert_eq!(value, 1.0);
        let (_, fine) = knapsack_dp(&[1.0, 1.0], &[1.2, 1.2], 3.0, 0.1).unwrap();
        assert_eq!(fine, 2.0);
    }

    #[test]
    fn exhaustive_guards_and_sorting_case() {
        assert!(exhaustive_opt(&[1.0; 21], &[1.0; 21], 3.0).is_err());
        assert_eq!(exhaustive_opt(&[], &[], 3.0).unwrap(), (vec![], 0.0));
        let v = [0.3, 0.9, 0.1, 0.7, 0.5];
        let (subset, value) = exhaustive_opt(&v, &[1.0; 5], 2.0).unwrap();
        assert_eq!(subset, vec![1, 3]);
        assert!((value - 1.6).abs() < 1e-15);
    }

    #[test]
    fn half_approx_prefers_single_big_item() {
        let (s, v) = knapsack_half_approx(&[1.0, 10.0], &[0.1, 10.0], 10.0).unwrap();
        assert_eq!((s, v), (vec![1], 10.0));
    }

    #[test]
    fn regret_report_csv() {
        let report = RegretReport {
            mode: RegretMode::Value,
            rows: vec![RegretRow {
                budget: 2.0,
                achieved: 1.5,
                oracle: 2.5,
                regret: 1.0,
                average_regret: 0.5,
            }],
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "B,F_S,oracle,R_B,avg_regret\n2,1.5,2.5,1,0.5\n");
    }
}
