//! Direct-product splitting of candidate families.
//!
//! Given a variable's candidate family and a subset `Z` of its ground set
//! (the union of all candidates), every candidate `U` is written as
//! `(U ∩ Z) ∪ (U \ Z)`. The two deduplicated projections become two
//! independent one-hot groups of bits, costing `Λ1 + Λ2 - 2` bits instead
//! of `Λ - 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::pscs::CandidateList;
use crate::varset::VarSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariablePlan {
    pub target: usize,
    pub z: VarSet,
    /// Projections onto `z`, empty set first.
    pub family1: Vec<VarSet>,
    /// Projections onto the complement of `z`, empty set first.
    pub family2: Vec<VarSet>,
    /// `mapping[λ] = (λ1, λ2)` for every original candidate `λ`.
    pub mapping: Vec<(usize, usize)>,
}

impl VariablePlan {
    pub fn lambda1(&self) -> usize {
        self.family1.len()
    }

    pub fn lambda2(&self) -> usize {
        self.family2.len()
    }

    /// `Λ1 + Λ2`.
    pub fn size(&self) -> usize {
        self.family1.len() + self.family2.len()
    }

    pub fn bits(&self) -> usize {
        self.size() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Size budget the plan was optimized under; `None` for explicit plans.
    pub budget: Option<usize>,
    pub variables: Vec<VariablePlan>,
}

impl SplitPlan {
    /// Score-component bits `sum_n (Λ1 + Λ2 - 2)`.
    pub fn score_bits(&self) -> usize {
        self.variables.iter().map(VariablePlan::bits).sum()
    }

    pub fn total_bits(&self) -> usize {
        let n = self.variables.len();
        self.score_bits() + n * n.saturating_sub(1) / 2
    }
}

/// Splits `family` (whose first element must be the empty set) along `z`.
pub fn split_with(target: usize, family: &[VarSet], z: &VarSet) -> VariablePlan {
    let mut family1 = vec![VarSet::new()];
    let mut family2 = vec![VarSet::new()];
    let mut mapping = Vec::with_capacity(family.len());
    for u in family {
        let a = u.intersection(z);
        let b = u.difference(z);
        let i = index_or_push(&mut family1, a);
        let j = index_or_push(&mut family2, b);
        mapping.push((i, j));
    }
    VariablePlan {
        target,
        z: z.clone(),
        family1,
        family2,
        mapping,
    }
}

fn index_or_push(v: &mut Vec<VarSet>, s: VarSet) -> usize {
    match v.iter().position(|x| *x == s) {
        Some(i) => i,
        None => {
            v.push(s);
            v.len() - 1
        }
    }
}

fn split_size(family: &[VarSet], z: &VarSet) -> usize {
    let mut a: Vec<VarSet> = family.iter().map(|u| u.intersection(z)).collect();
    let mut b: Vec<VarSet> = family.iter().map(|u| u.difference(z)).collect();
    a.push(VarSet::new());
    b.push(VarSet::new());
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    a.len() + b.len()
}

/// Groups ground-set variables that occur in exactly the same candidates.
/// Classes are ordered by their smallest member.
pub fn membership_classes(family: &[VarSet]) -> Vec<VarSet> {
    let ground = family.iter().fold(VarSet::new(), |acc, u| acc.union(u));
    let mut by_pattern: BTreeMap<Vec<bool>, VarSet> = BTreeMap::new();
    for v in ground.iter() {
        let pattern = family.iter().map(|u| u.contains(v)).collect();
        by_pattern.entry(pattern).or_default().insert(v);
    }
    let mut classes: Vec<VarSet> = by_pattern.into_values().collect();
    classes.sort();
    classes
}

/// Finds the `z` with `|z| <= budget` minimizing `Λ1 + Λ2`. Candidates are
/// unions of membership classes; ties prefer smaller `|z|`, then the
/// lexicographically smaller `z`. `z = ∅` is always considered.
pub fn optimize_split(target: usize, family: &[VarSet], budget: usize) -> VariablePlan {
    let classes = membership_classes(family);
    let mut best = (split_size(family, &VarSet::new()), 0usize, VarSet::new());
    let mut stack: Vec<(usize, VarSet)> = vec![(0, VarSet::new())];
    // Depth-first over class subsets in index order, pruning on size.
    while let Some((next, z)) = stack.pop() {
        for c in next..classes.len() {
            let cand = z.union(&classes[c]);
            if cand.len() > budget {
                continue;
            }
            let key = (split_size(family, &cand), cand.len(), cand.clone());
            if key < best {
                best = key;
            }
            stack.push((c + 1, cand));
        }
    }
    split_with(target, family, &best.2)
}

fn family_sets(list: &CandidateList) -> Vec<VarSet> {
    list.family.iter().map(|m| m.set.clone()).collect()
}

/// Optimized plan for every variable under the size budget `k`.
pub fn plan_splits(lists: &[CandidateList], k: usize) -> SplitPlan {
    SplitPlan {
        budget: Some(k),
        variables: lists
            .iter()
            .map(|l| optimize_split(l.target, &family_sets(l), k))
            .collect(),
    }
}

/// The trivial plan `Z_n = ∅` for every variable.
pub fn plan_unsplit(lists: &[CandidateList]) -> SplitPlan {
    SplitPlan {
        budget: Some(0),
        variables: lists
            .iter()
            .map(|l| split_with(l.target, &family_sets(l), &VarSet::new()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig_family() -> Vec<VarSet> {
        vec![
            VarSet::new(),
            VarSet::from([3]),
            VarSet::from([2, 3]),
            VarSet::from([4]),
            VarSet::from([3, 4]),
            VarSet::from([2, 3, 4]),
        ]
    }

    #[test]
    fn trivial_family() {
        let p = optimize_split(0, &[VarSet::new()], 3);
        assert_eq!((p.lambda1(), p.lambda2()), (1, 1));
        assert_eq!(p.bits(), 0);
    }

    #[test]
    fn figure_style_split() {
        let p = split_with(1, &fig_family(), &VarSet::from([2, 3]));
        assert_eq!(
            p.family1,
            vec![VarSet::new(), VarSet::from([3]), VarSet::from([2, 3])]
        );
        assert_eq!(p.family2, vec![VarSet::new(), VarSet::from([4])]);
        assert_eq!(p.bits(), 3);
        for (u, &(a, b)) in fig_family().iter().zip(&p.mapping) {
            assert_eq!(&p.family1[a].union(&p.family2[b]), u);
        }
    }

    #[test]
    fn figure_family_optimum_is_five() {
        // {4} and its complement {2,3} both give Λ1 + Λ2 = 5; the smaller wins.
        let p = optimize_split(1, &fig_family(), 2);
        assert_eq!(p.size(), 5);
        assert_eq!(p.z, VarSet::from([4]));
    }

    #[test]
    fn zero_budget_is_unsplit() {
        let fam = fig_family();
        let p = optimize_split(1, &fam, 0);
        assert!(p.z.is_empty());
        assert_eq!(p.lambda1(), 1);
        assert_eq!(p.lambda2(), fam.len());
        assert_eq!(p.bits(), fam.len() - 1);
    }

    #[test]
    fn classes_merge_cooccurring_variables() {
        let fam = vec![
            VarSet::new(),
            VarSet::from([1, 2]),
            VarSet::from([1, 2, 5]),
            VarSet::from([5]),
        ];
        assert_eq!(
            membership_classes(&fam),
            vec![VarSet::from([1, 2]), VarSet::from([5])]
        );
    }

    fn family_strategy() -> impl Strategy<Value = Vec<VarSet>> {
        proptest::collection::btree_set(proptest::collection::btree_set(0usize..7, 1..5), 0..12)
            .prop_map(|s| {
                std::iter::once(VarSet::new())
                    .chain(s.into_iter().map(|x| x.into_iter().collect()))
                    .collect()
            })
    }

    /// Brute force over every subset of the ground set, no class merging.
    fn brute_force(family: &[VarSet], k: usize) -> usize {
        let ground: Vec<usize> = family
            .iter()
            .fold(VarSet::new(), |a, u| a.union(u))
            .to_vec();
        (0u32..1 << ground.len())
            .filter(|m| m.count_ones() as usize <= k)
            .map(|m| {
                let z: VarSet = ground
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| m & (1 << i) != 0)
                    .map(|(_, &v)| v)
                    .collect();
                split_size(family, &z)
            })
            .min()
            .unwrap()
    }

    proptest! {
        #[test]
        fn plan_invariants(family in family_strategy(), k in 0usize..5) {
            let p = optimize_split(0, &family, k);
            let ground = family.iter().fold(VarSet::new(), |a, u| a.union(u));
            prop_assert!(p.z.len() <= k);
            prop_assert!(p.z.is_subset(&ground));
            prop_assert!(p.family1[0].is_empty() && p.family2[0].is_empty());
            for s in &p.family1 { prop_assert!(s.is_subset(&p.z)); }
            for s in &p.family2 { prop_assert!(s.is_subset(&ground) && s.is_disjoint(&p.z)); }
            for (u, &(a, b)) in family.iter().zip(&p.mapping) {
                prop_assert_eq!(&p.family1[a].union(&p.family2[b]), u);
            }
            prop_assert!(p.lambda1() <= 1 << p.z.len());
            prop_assert!(p.lambda2() <= 1 << ground.difference(&p.z).len());
            prop_assert!(p.size() - 2 < family.len());
            // Class merging never loses the optimum.
            prop_assert_eq!(p.size(), brute_force(&family, k));
            // Non-increasing in the budget.
            let q = optimize_split(0, &family, k + 1);
            prop_assert!(q.size() <= p.size());
        }
    }
}
