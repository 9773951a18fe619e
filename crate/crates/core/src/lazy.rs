//! Lazy variance updates with a failsafe full update.
//!
//! Predictive variances never grow as observations are added, so a
//! variance computed in an earlier round bounds the current one from
//! above. Means, on the other hand, move in both directions; they are
//! refreshed for every candidate each round (`O(t)` per item) while the
//! variances (`O(t²)` per item) stay stale. Keys are rebuilt from the fresh
//! mean and the cached variances every round, since `β_t` changes too.
//!
//! Selection pops the head of the queue, refreshes its variances and pushes
//! it back, until the head is an entry refreshed in this round. Heap order
//! is (score descending, id ascending), so the winner is exactly the
//! exhaustive-scan argmax with lowest-id tie-breaking. When more than
//! `threshold` refreshes are needed in one round, every remaining stale
//! candidate is refreshed at once and the argmax is taken directly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::Result;
use crate::kernels::Covariance;
use crate::selection::{argmax, Fresh, Pick, RoundView};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    key: f64,
    id: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug)]
struct Cached {
    fresh: Fresh,
    epoch: u64,
}

/// Counters accumulated over the life of a queue.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LazyStats {
    pub recomputations: usize,
    pub full_updates: usize,
    /// Largest observed `fresh score - stored key`; never positive when
    /// stored keys are valid upper bounds.
    pub max_bound_excess: f64,
}

#[derive(Clone, Debug)]
pub struct LazyQueue {
    heap: BinaryHeap<Entry>,
    cache: Vec<Option<Cached>>,
    epoch: u64,
    threshold: usize,
    pops_this_round: usize,
    stats: LazyStats,
}

impl LazyQueue {
    /// Queue over `n` items allowing `threshold` lazy refreshes per round.
    pub fn new(n: usize, threshold: usize) -> Self {
        LazyQueue {
            heap: BinaryHeap::with_capacity(n),
            cache: vec![None; n],
            epoch: 0,
            threshold,
            pops_this_round: 0,
            stats: LazyStats {
                max_bound_excess: f64::NEG_INFINITY,
                ..LazyStats::default()
            },
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn stats(&self) -> LazyStats {
        self.stats
    }

    pub fn pops_this_round(&self) -> usize {
        self.pops_this_round
    }

    /// Ids in queue order, best first.
    pub fn ordered_ids(&self) -> Vec<usize> {
        let mut entries = self.heap.clone().into_sorted_vec();
        entries.reverse();
        entries.into_iter().map(|e| e.id).collect()
    }

    fn bound<C: Covariance + ?Sized>(&self, view: &RoundView<'_, '_, C>, v: usize) -> Fresh {
        match self.cache[v] {
            Some(c) => c.fresh,
            None => view.prior(v),
        }
    }

    fn load<C: Covariance + ?Sized>(&mut self, view: &RoundView<'_, '_, C>, candidates: &[usize]) {
        let entries: Vec<Entry> = candidates
            .iter()
            .map(|&v| Entry {
                key: view.score(v, self.bound(view, v)),
                id: v,
            })
            .collect();
        self.heap = BinaryHeap::from(entries);
    }

    /// Refreshes every candidate and rebuilds the queue with exact keys.
    /// Returns the number of refreshes.
    pub fn rebuild<C: Covariance + ?Sized>(
        &mut self,
        view: &RoundView<'_, '_, C>,
        candidates: &[usize],
    ) -> Result<usize> {
        self.epoch += 1;
        self.pops_this_round = 0;
        let fresh = view.fresh_all(candidates)?;
        for (&v, &f) in candidates.iter().zip(&fresh) {
            self.cache[v] = Some(Cached {
                fresh: f,
                epoch: self.epoch,
            });
        }
        self.stats.recomputations += candidates.len();
        self.load(view, candidates);
        Ok(candidates.len())
    }

    /// Chooses the exhaustive-scan argmax over `candidates`, refreshing as
    /// few variances as possible. `None` when there are no candidates.
    pub fn lazy_select<C: Covariance + ?Sized>(
        &mut self,
        view: &RoundView<'_, '_, C>,
        candidates: &[usize],
    ) -> Result<Option<Pick>> {
        self.epoch += 1;
        self.pops_this_round = 0;
        if candidates.is_empty() {
            self.heap.clear();
            return Ok(None);
        }
        self.load(view, candidates);
        let mut scratch = Vec::new();
        while let Some(head) = self.heap.pop() {
            if let Some(c) = self.cache[head.id] {
                if c.epoch == self.epoch {
                    self.heap.push(head);
                    return Ok(Some(Pick {
                        item: head.id,
                        score: head.key,
                        recomputations: self.pops_this_round,
                    }));
                }
            }
            if self.pops_this_round >= self.threshold {
                self.heap.push(head);
                return self.full_update(view, candidates).map(Some);
            }
            let fresh = view.fresh(head.id, &mut scratch)?;
            let score = view.score(head.id, fresh);
            self.stats.max_bound_excess = self.stats.max_bound_excess.max(score - head.key);
            self.pops_this_round += 1;
            self.stats.recomputations += 1;
            self.cache[head.id] = Some(Cached {
                fresh,
                epoch: self.epoch,
            });
            self.heap.push(Entry { key: score, id: head.id });
        }
        unreachable!("heap holds every candidate")
    }

    fn full_update<C: Covariance + ?Sized>(
        &mut self,
        view: &RoundView<'_, '_, C>,
        candidates: &[usize],
    ) -> Result<Pick> {
        self.stats.full_updates += 1;
        let stale: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&v| !matches!(self.cache[v], Some(c) if c.epoch == self.epoch))
            .collect();
        let fresh = view.fresh_all(&stale)?;
        for (&v, &f) in stale.iter().zip(&fresh) {
            self.cache[v] = Some(Cached {
                fresh: f,
                epoch: self.epoch,
            });
        }
        self.pops_this_round += stale.len();
        self.stats.recomputations += stale.len();
        let epoch = self.epoch;
        let (item, score) = argmax(candidates.iter().map(|&v| {
            let c = self.cache[v].expect("refreshed");
            debug_assert_eq!(c.epoch, epoch);
            (v, view.score(v, c.fresh))
        }))
        .expect("non-empty candidates");
        self.load(view, candidates);
        Ok(Pick {
            item,
            score,
            recomputations: self.pops_this_round,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::GramMatrix;
    use crate::posterior::PosteriorState;
    use crate::selection::{Rule, RuleScore};
    use nalgebra::DMatrix;

    fn setup(n: usize) -> GramMatrix {
        GramMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| {
            (-((i as f64 - j as f64) / 3.0).powi(2)).exp()
        }))
        .unwrap()
    }

    fn scorer(beta: f64) -> RuleScore {
        RuleScore {
            rule: Rule::Uniform,
            lambda: 0.0,
            sqrt_beta: beta.sqrt(),
            sigma_n: 1.0,
        }
    }

    #[test]
    fn first_round_needs_one_refresh() {
        let g = setup(10);
        let post = PosteriorState::new(&g, 0.1).unwrap();
        let view = RoundView::new(&post, None, scorer(2.0), None);
        let all: Vec<usize> = (0..10).collect();
        let mut q = LazyQueue::new(10, 5);
        let pick = q.lazy_select(&view, &all).unwrap().unwrap();
        assert_eq!(pick.item, 0);
        assert_eq!(pick.recomputations, 1);
    }

    #[test]
    fn rebuild_orders_by_exact_scores_and_is_idempotent() {
        let g = setup(12);
        let mut post = PosteriorState::new(&g, 0.2).unwrap();
        post.update(4, 1.0).unwrap();
        post.update(9, -0.5).unwrap();
        let view = RoundView::new(&post, None, scorer(1.5), None);
        let cands: Vec<usize> = (0..12).filter(|v| *v != 4 && *v != 9).collect();
        let mut q = LazyQueue::new(12, 3);
        assert_eq!(q.rebuild(&view, &cands).unwrap(), cands.len());
        let first = q.ordered_ids();
        q.rebuild(&view, &cands).unwrap();
        assert_eq!(q.ordered_ids(), first);

        let mut oracle: Vec<(usize, f64)> = cands
            .iter()
            .map(|&v| {
                let var = post.variance(v).unwrap();
                (v, post.mean(v) + 1.5f64.sqrt() * var.sqrt())
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(first, oracle.iter().map(|p| p.0).collect::<Vec<_>>());

        let pick = q.lazy_select(&view, &cands).unwrap().unwrap();
        assert_eq!(pick.recomputations, 1);
        assert_eq!(pick.item, oracle[0].0);
    }

    #[test]
    fn failsafe_matches_exhaustive() {
        let g = setup(30);
        let mut post = PosteriorState::new(&g, 0.1).unwrap();
        let mut q = LazyQueue::new(30, 1);
        let mut remaining: Vec<usize> = (0..30).collect();
        for round in 0..12 {
            let view = RoundView::new(&post, None, scorer(3.0), None);
            let lazy = q.lazy_select(&view, &remaining).unwrap().unwrap();
            let full = view.exhaustive(&remaining).unwrap().unwrap();
            assert_eq!(lazy.item, full.item, "round {round}");
            assert_eq!(lazy.score.to_bits(), full.score.to_bits());
            drop(view);
            let v = lazy.item;
            post.update(v, (v as f64 * 0.37).sin()).unwrap();
            remaining.retain(|&x| x != v);
        }
        assert!(q.stats().full_updates > 0);
        assert!(q.stats().max_bound_excess <= 0.0);
    }

    #[test]
    fn empty_candidates_signal_exhaustion() {
        let g = setup(3);
        let post = PosteriorState::new(&g, 0.1).unwrap();
        let view = RoundView::new(&post, None, scorer(1.0), None);
        assert!(LazyQueue::new(3, 1).lazy_select(&view, &[]).unwrap().is_none());
    }
}
