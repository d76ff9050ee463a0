//! Benchmark aggregation rules over the raw PDS-union history.
//!
//! These rules consume the per-iteration candidate sets `S_t` (not the pruned
//! detection sets) and are evaluated at a fixed iteration budget or at the
//! budget matched to the sequential method's stopping time.

use std::collections::BTreeSet;

/// Ordered PDS candidate sets, one per perturbation iteration.
#[derive(Debug, Clone, Default)]
pub struct UnionHistory {
    sets: Vec<BTreeSet<usize>>,
    p: usize,
}

impl UnionHistory {
    pub fn new(p: usize) -> Self {
        Self { sets: Vec::new(), p }
    }

    pub fn push(&mut self, set: BTreeSet<usize>) {
        debug_assert!(set.iter().all(|&j| j < self.p));
        self.sets.push(set);
    }

    pub fn sets(&self) -> &[BTreeSet<usize>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Union of the first `budget` candidate sets.
pub fn union_rule(history: &UnionHistory, budget: usize) -> BTreeSet<usize> {
    let budget = budget.min(history.len());
    let mut out = BTreeSet::new();
    for set in &history.sets[..budget] {
        out.extend(set.iter().copied());
    }
    out
}

/// Variables appearing in at least `tau` of the first `budget` sets
/// (boundary inclusive).
pub fn frequency_threshold(history: &UnionHistory, tau: f64, budget: usize) -> BTreeSet<usize> {
    let budget = budget.min(history.len());
    if budget == 0 {
        return BTreeSet::new();
    }
    let mut counts = vec![0usize; history.p];
    for set in &history.sets[..budget] {
        for &j in set {
            counts[j] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c as f64 / budget as f64 >= tau)
        .map(|(j, _)| j)
        .collect()
}

/// Benchmark sets evaluated at the sequential method's stopping time.
#[derive(Debug, Clone)]
pub struct MatchedSets {
    pub union: BTreeSet<usize>,
    /// One entry per requested threshold, in input order.
    pub frequency: Vec<(f64, BTreeSet<usize>)>,
}

/// Applies the union rule and each frequency threshold with
/// `budget = stop_iteration`.
pub fn matched_budget_sets(
    history: &UnionHistory,
    stop_iteration: usize,
    taus: &[f64],
) -> MatchedSets {
    MatchedSets {
        union: union_rule(history, stop_iteration),
        frequency: taus
            .iter()
            .map(|&tau| (tau, frequency_threshold(history, tau, stop_iteration)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(sets: &[&[usize]], p: usize) -> UnionHistory {
        let mut h = UnionHistory::new(p);
        for s in sets {
            h.push(s.iter().copied().collect());
        }
        h
    }

    #[test]
    fn single_iteration_union_is_that_set() {
        let h = history(&[&[1, 3]], 5);
        assert_eq!(union_rule(&h, 1), BTreeSet::from([1, 3]));
    }

    #[test]
    fn union_is_monotone_in_budget() {
        let h = history(&[&[0], &[1], &[2], &[0, 3], &[4]], 5);
        let small = union_rule(&h, 2);
        let large = union_rule(&h, 5);
        assert!(small.is_subset(&large));
        assert_eq!(large.len(), 5);
    }

    #[test]
    fn disjoint_singletons_accumulate() {
        let h = history(&[&[0], &[1], &[2], &[3], &[4]], 5);
        assert_eq!(union_rule(&h, 5).len(), 5);
    }

    #[test]
    fn frequency_boundary_is_inclusive() {
        // j=0 in exactly 100 of 200 sets
        let sets: Vec<Vec<usize>> = (0..200)
            .map(|t| if t % 2 == 0 { vec![0] } else { vec![] })
            .collect();
        let mut h = UnionHistory::new(2);
        for s in sets {
            h.push(s.into_iter().collect());
        }
        assert!(frequency_threshold(&h, 0.50, 200).contains(&0));
        assert!(!frequency_threshold(&h, 0.75, 200).contains(&0));
    }

    #[test]
    fn just_below_threshold_excluded() {
        // 149/200 = 0.745 < 0.75
        let mut h = UnionHistory::new(1);
        for t in 0..200 {
            h.push(if t < 149 { [0].into() } else { BTreeSet::new() });
        }
        assert!(!frequency_threshold(&h, 0.75, 200).contains(&0));
        assert!(frequency_threshold(&h, 0.50, 200).contains(&0));
    }

    #[test]
    fn stricter_threshold_is_subset() {
        let h = history(&[&[0, 1], &[0], &[0, 2], &[1, 2]], 3);
        let t75 = frequency_threshold(&h, 0.75, 4);
        let t50 = frequency_threshold(&h, 0.50, 4);
        assert!(t75.is_subset(&t50));
    }

    #[test]
    fn frequency_always_subset_of_union() {
        let h = history(&[&[0, 1], &[1], &[2], &[1, 2]], 4);
        for budget in 1..=4 {
            for tau in [0.25, 0.5, 0.75, 1.0] {
                assert!(frequency_threshold(&h, tau, budget).is_subset(&union_rule(&h, budget)));
            }
        }
    }

    #[test]
    fn matched_at_full_length_equals_fixed() {
        let h = history(&[&[0, 1], &[1], &[1, 2], &[2]], 3);
        let matched = matched_budget_sets(&h, 4, &[0.5, 0.75]);
        assert_eq!(matched.union, union_rule(&h, 4));
        assert_eq!(matched.frequency[0].1, frequency_threshold(&h, 0.5, 4));
        assert_eq!(matched.frequency[1].1, frequency_threshold(&h, 0.75, 4));
    }

    #[test]
    fn matched_at_one_is_first_set_membership() {
        let h = history(&[&[2], &[0, 1]], 3);
        let matched = matched_budget_sets(&h, 1, &[0.5, 0.75]);
        assert_eq!(matched.union, BTreeSet::from([2]));
        for (_, set) in &matched.frequency {
            assert_eq!(set, &BTreeSet::from([2]));
        }
    }
}
