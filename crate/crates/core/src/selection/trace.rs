use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    /// One unit per selected item.
    Rounds,
    /// Each item charges its own cost.
    Cost,
}

/// One selection round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub item: usize,
    /// Rule score of the chosen item (the criterion value for baselines).
    pub score: f64,
    pub beta: f64,
    /// Noisy feedback.
    pub observed: f64,
    pub cost: f64,
    /// Budget consumed so far.
    pub cumulative_cost: f64,
    #[serde(default)]
    pub true_value: Option<f64>,
    #[serde(default)]
    pub cumulative_value: Option<f64>,
    #[serde(default)]
    pub diversity_gain: Option<f64>,
    #[serde(default)]
    pub cumulative_diversity: Option<f64>,
    /// Variance refreshes spent in this round.
    pub recomputations: usize,
    pub wall_nanos: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub policy: String,
    pub budget_kind: BudgetKind,
    pub budget: f64,
    pub rounds: Vec<RoundRecord>,
    /// Budget left when the run stopped.
    pub leftover_budget: f64,
}

impl SelectionTrace {
    pub(crate) fn new(policy: String, budget_kind: BudgetKind, budget: f64) -> Self {
        SelectionTrace {
            policy,
            budget_kind,
            budget,
            rounds: Vec::new(),
            leftover_budget: budget,
        }
    }

    /// Appends a round, filling `cumulative_value` from the running sum of
    /// true values.
    pub(crate) fn push(&mut self, mut record: RoundRecord) {
        let previous = match self.rounds.last() {
            Some(r) => r.cumulative_value,
            None => Some(0.0),
        };
        record.cumulative_value = previous.zip(record.true_value).map(|(a, b)| a + b);
        self.rounds.push(record);
    }

    pub(crate) fn finish(&mut self, leftover: f64) {
        self.leftover_budget = leftover;
    }

    /// Selected items in order, `S_B`.
    pub fn selected(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.item).collect()
    }

    pub fn total_recomputations(&self) -> usize {
        self.rounds.iter().map(|r| r.recomputations).sum()
    }

    pub fn total_wall_nanos(&self) -> u64 {
        self.rounds.iter().map(|r| r.wall_nanos).sum()
    }

    /// `F(S) = Σ f(v)`, when true values are known.
    pub fn total_value(&self) -> Option<f64> {
        match self.rounds.last() {
            Some(r) => r.cumulative_value,
            None => Some(0.0),
        }
    }

    pub fn total_diversity(&self) -> Option<f64> {
        match self.rounds.last() {
            Some(r) => r.cumulative_diversity,
            None => Some(0.0),
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cumulative_cost)
    }
}
