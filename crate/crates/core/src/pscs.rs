//! Parent set candidate selection.
//!
//! For one objective variable, repeatedly trains CART on shrinking
//! explanatory sets and records `(used, allowed, score)` spans. Every
//! parent set `X'` with `used ⊆ X' ⊆ allowed` has the span's score, and the
//! recursion below guarantees the spans jointly cover every subset of the
//! other variables.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cart::{self, CartError, Score};
use crate::dataset::Dataset;
use crate::varset::VarSet;

#[derive(Debug, Error)]
pub enum PscsError {
    #[error(transparent)]
    Cart(#[from] CartError),
    #[error("variable {0} out of range")]
    InvalidVariable(usize),
    #[error("resource cap hit for variable {target}: {reason}")]
    CapExceeded {
        target: usize,
        reason: String,
        partial: Box<CandidateList>,
    },
    #[error("no record spans {set} for variable {target} and the list is partial")]
    NoSpan { target: usize, set: VarSet },
    #[error("parent set {set} contains the objective variable {target}")]
    ContainsTarget { target: usize, set: VarSet },
    #[error("records disagree on the score of {set} for variable {target}: {a} vs {b}")]
    InconsistentSpans {
        target: usize,
        set: VarSet,
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub used: VarSet,
    pub allowed: VarSet,
    pub score: Score,
}

impl CandidateRecord {
    pub fn spans(&self, set: &VarSet) -> bool {
        self.used.is_subset(set) && set.is_subset(&self.allowed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub set: VarSet,
    pub score: Score,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PscsStats {
    /// Number of CART trainings (records).
    pub omega: usize,
    /// Number of distinct used-variable sets.
    pub lambda: usize,
    pub memo_hits: usize,
    pub train_seconds: f64,
}

impl PscsStats {
    pub fn efficiency(&self) -> f64 {
        self.omega as f64 / self.lambda.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub target: usize,
    pub num_variables: usize,
    pub threshold: f64,
    pub records: Vec<CandidateRecord>,
    /// Distinct used sets in order of first appearance, with the empty set
    /// always first.
    pub family: Vec<FamilyMember>,
    pub stats: PscsStats,
    /// False when a resource cap stopped the recursion early.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_omega: Option<usize>,
    pub max_seconds: Option<f64>,
}

/// A resolved score lookup: the record core that determines the score.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub core: VarSet,
    pub score: Score,
}

pub fn run_pscs(
    data: &Dataset,
    target: usize,
    threshold: f64,
    limits: Limits,
) -> Result<CandidateList, PscsError> {
    if target >= data.num_variables() {
        return Err(PscsError::InvalidVariable(target));
    }
    let start = Instant::now();
    let mut run = Run {
        data,
        target,
        threshold,
        limits,
        deadline: limits
            .max_seconds
            .map(|s| start + Duration::from_secs_f64(s.max(0.0))),
        records: Vec::new(),
        memo_hits: 0,
        aborted: None,
    };
    run.visit(data.others(target))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut list = CandidateList::from_records(
        target,
        data.num_variables(),
        threshold,
        run.records,
        cart::empty_score(data, target),
    );
    list.stats.memo_hits = run.memo_hits;
    list.stats.train_seconds = elapsed;
    match run.aborted {
        None => Ok(list),
        Some(reason) => {
            list.complete = false;
            Err(PscsError::CapExceeded {
                target,
                reason,
                partial: Box::new(list),
            })
        }
    }
}

struct Run<'a> {
    data: &'a Dataset,
    target: usize,
    threshold: f64,
    limits: Limits,
    deadline: Option<Instant>,
    records: Vec<CandidateRecord>,
    memo_hits: usize,
    aborted: Option<String>,
}

impl Run<'_> {
    fn visit(&mut self, allowed: VarSet) -> Result<(), PscsError> {
        if self.aborted.is_some() {
            return Ok(());
        }
        let used = match self.records.iter().find(|r| r.spans(&allowed)) {
            Some(r) => {
                self.memo_hits += 1;
                r.used.clone()
            }
            None => {
                if let Some(max) = self.limits.max_omega {
                    if self.records.len() >= max {
                        self.aborted = Some(format!("more than {max} trainings needed"));
                        return Ok(());
                    }
                }
                if self.deadline.is_some_and(|d| Instant::now() > d) {
                    self.aborted = Some(format!(
                        "wall time exceeded {} s",
                        self.limits.max_seconds.unwrap_or_default()
                    ));
                    return Ok(());
                }
                let tree = cart::train_cart(self.data, self.target, &allowed, self.threshold)?;
                let used = tree.used_variables();
                self.records.push(CandidateRecord {
                    used: used.clone(),
                    allowed: allowed.clone(),
                    score: tree.score(),
                });
                used
            }
        };
        for u in used.iter() {
            self.visit(allowed.without(u))?;
        }
        Ok(())
    }
}

impl CandidateList {
    /// Builds the list and its deduplicated family from raw records.
    /// `empty` is the score of the empty parent set, used when no record
    /// has an empty core (only possible for partial lists).
    pub fn from_records(
        target: usize,
        num_variables: usize,
        threshold: f64,
        records: Vec<CandidateRecord>,
        empty: Score,
    ) -> Self {
        let empty_score = records
            .iter()
            .find(|r| r.used.is_empty())
            .map_or(empty, |r| r.score);
        let mut family = vec![FamilyMember {
            set: VarSet::new(),
            score: empty_score,
        }];
        for r in &records {
            if !family.iter().any(|m| m.set == r.used) {
                family.push(FamilyMember {
                    set: r.used.clone(),
                    score: r.score,
                });
            }
        }
        let stats = PscsStats {
            omega: records.len(),
            lambda: family.len(),
            memo_hits: 0,
            train_seconds: 0.0,
        };
        Self {
            target,
            num_variables,
            threshold,
            records,
            family,
            stats,
            complete: true,
        }
    }

    pub fn lambda(&self) -> usize {
        self.family.len()
    }

    pub fn omega(&self) -> usize {
        self.records.len()
    }

    /// Score of the empty parent set.
    pub fn empty_score(&self) -> Score {
        self.family[0].score
    }

    /// Union of all family members.
    pub fn ground_set(&self) -> VarSet {
        self.family
            .iter()
            .fold(VarSet::new(), |acc, m| acc.union(&m.set))
    }

    /// Score of parent set `set` via any record whose span contains it.
    /// Every matching record must agree on the score.
    pub fn lookup(&self, set: &VarSet) -> Result<Lookup, PscsError> {
        if set.contains(self.target) {
            return Err(PscsError::ContainsTarget {
                target: self.target,
                set: set.clone(),
            });
        }
        let mut hit: Option<&CandidateRecord> = None;
        for r in self.records.iter().filter(|r| r.spans(set)) {
            match hit {
                None => hit = Some(r),
                Some(h) if h.score != r.score => {
                    return Err(PscsError::InconsistentSpans {
                        target: self.target,
                        set: set.clone(),
                        a: h.score.value(),
                        b: r.score.value(),
                    })
                }
                Some(_) => {}
            }
        }
        match hit {
            Some(r) => Ok(Lookup {
                core: r.used.clone(),
                score: r.score,
            }),
            None if set.is_empty() && !self.complete => Ok(Lookup {
                core: VarSet::new(),
                score: self.empty_score(),
            }),
            None => Err(PscsError::NoSpan {
                target: self.target,
                set: set.clone(),
            }),
        }
    }

    /// Like [`CandidateList::lookup`], but trains CART on `set` when no
    /// record spans it and memoizes the result as a new record.
    pub fn lookup_or_train(&mut self, data: &Dataset, set: &VarSet) -> Result<Lookup, PscsError> {
        match self.lookup(set) {
            Err(PscsError::NoSpan { .. }) => {
                let tree = cart::train_cart(data, self.target, set, self.threshold)?;
                let record = CandidateRecord {
                    used: tree.used_variables(),
                    allowed: set.clone(),
                    score: tree.score(),
                };
                let out = Lookup {
                    core: record.used.clone(),
                    score: record.score,
                };
                if !self.family.iter().any(|m| m.set == record.used) {
                    self.family.push(FamilyMember {
                        set: record.used.clone(),
                        score: record.score,
                    });
                }
                self.records.push(record);
                self.stats.omega = self.records.len();
                self.stats.lambda = self.family.len();
                Ok(out)
            }
            other => other,
        }
    }

    /// Checks that every subset of the other variables lies in some span.
    /// Exponential in the number of variables.
    pub fn covers_power_set(&self) -> bool {
        let others: Vec<usize> = (0..self.num_variables)
            .filter(|&v| v != self.target)
            .collect();
        (0u64..1 << others.len()).all(|mask| {
            let set: VarSet = others
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &v)| v)
                .collect();
            self.records.iter().any(|r| r.spans(&set))
        })
    }
}

/// Runs selection for every variable, in parallel on the current rayon pool.
pub fn run_all(
    data: &Dataset,
    threshold: f64,
    limits: Limits,
) -> Result<Vec<CandidateList>, PscsError> {
    use rayon::prelude::*;
    (0..data.num_variables())
        .into_par_iter()
        .map(|n| run_pscs(data, n, threshold, limits))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::train_cart;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth(seed: u64, n: usize) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            num_variables: n,
            max_parents: 3,
            states: 3,
            edge_probability: 0.6,
            seed,
            num_rows: 2000,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn infinite_threshold_gives_single_record() {
        let d = synth(1, 5);
        let l = run_pscs(&d, 0, f64::INFINITY, Limits::default()).unwrap();
        assert_eq!(l.omega(), 1);
        assert_eq!(l.lambda(), 1);
        assert!(l.records[0].used.is_empty());
        assert_eq!(l.records[0].allowed, d.others(0));
        assert_eq!(l.records[0].score, cart::empty_score(&d, 0));
    }

    #[test]
    fn deterministic_copy_chain() {
        // x0 copies x2; x1 and x3 are unrelated noise.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cells = Vec::new();
        for _ in 0..1000 {
            let a: u16 = rng.random_range(0..2);
            let b: u16 = rng.random_range(0..2);
            let c: u16 = rng.random_range(0..2);
            cells.extend([a, b, a, c]);
        }
        let d = Dataset::new((0..4).map(|i| format!("x{i}")).collect(), vec![2; 4], cells).unwrap();
        let l = run_pscs(&d, 0, 0.01, Limits::default()).unwrap();
        assert_eq!(l.omega(), 2);
        assert_eq!(l.lambda(), 2);
        assert_eq!(l.records[0].used, VarSet::from([2]));
        assert_eq!(l.records[0].allowed, VarSet::from([1, 2, 3]));
        assert_eq!(l.records[0].score.value(), 0.0);
        assert!(l.records[1].used.is_empty());
        assert_eq!(l.records[1].allowed, VarSet::from([1, 3]));
        assert_eq!(l.records[1].score, cart::empty_score(&d, 0));
    }

    #[test]
    fn family_invariants_and_coverage() {
        let d = synth(7, 6);
        for n in 0..6 {
            let l = run_pscs(&d, n, 0.003, Limits::default()).unwrap();
            assert!(l.family[0].set.is_empty());
            assert!(l.lambda() <= l.omega());
            assert!(l.stats.efficiency() >= 1.0);
            for m in &l.family {
                assert!(l.records.iter().any(|r| r.used == m.set));
            }
            for r in &l.records {
                assert!(r.used.is_subset(&r.allowed));
                assert!(!r.allowed.contains(n));
            }
            assert!(l.covers_power_set());
        }
    }

    #[test]
    fn lookup_matches_direct_training() {
        let d = synth(9, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 0..5 {
            let l = run_pscs(&d, n, 0.003, Limits::default()).unwrap();
            let empty = l.lookup(&VarSet::new()).unwrap();
            assert!(empty.core.is_empty());
            assert_eq!(empty.score, cart::empty_score(&d, n));
            for r in &l.records {
                assert_eq!(l.lookup(&r.used).unwrap().score, r.score);
            }
            for _ in 0..20 {
                let set: VarSet = (0..5).filter(|&v| v != n && rng.random_bool(0.5)).collect();
                let got = l.lookup(&set).unwrap();
                let direct = train_cart(&d, n, &set, 0.003).unwrap();
                assert_eq!(got.score, direct.score());
                assert_eq!(got.core, direct.used_variables());
            }
        }
    }

    #[test]
    fn memo_hits_agree_with_retraining() {
        let d = synth(13, 6);
        let l = run_pscs(&d, 2, 0.002, Limits::default()).unwrap();
        assert!(l.stats.memo_hits > 0, "expected some memo hits");
        // Every span claims the score of its core for the whole interval;
        // spot-check the upper end of each span.
        for r in &l.records {
            let t = train_cart(&d, 2, &r.allowed, 0.002).unwrap();
            assert_eq!(t.used_variables(), r.used);
            assert_eq!(t.score(), r.score);
        }
    }

    #[test]
    fn cap_returns_partial_list() {
        let d = synth(7, 6);
        match run_pscs(
            &d,
            0,
            0.0005,
            Limits {
                max_omega: Some(1),
                max_seconds: None,
            },
        ) {
            Err(PscsError::CapExceeded { partial, .. }) => {
                assert!(!partial.complete);
                assert_eq!(partial.omega(), 1);
                assert!(partial.family[0].set.is_empty());
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn partial_list_falls_back_to_training() {
        let d = synth(7, 6);
        let Err(PscsError::CapExceeded { partial, .. }) = run_pscs(
            &d,
            0,
            0.0005,
            Limits {
                max_omega: Some(1),
                max_seconds: None,
            },
        ) else {
            panic!("expected cap");
        };
        let mut list = *partial;
        let set = VarSet::from([1]);
        if list.lookup(&set).is_err() {
            let got = list.lookup_or_train(&d, &set).unwrap();
            assert_eq!(got.score, train_cart(&d, 0, &set, 0.0005).unwrap().score());
            assert_eq!(list.lookup(&set).unwrap(), got);
        }
    }

    #[test]
    fn lookup_rejects_target() {
        let d = synth(1, 3);
        let l = run_pscs(&d, 0, 0.01, Limits::default()).unwrap();
        assert!(matches!(
            l.lookup(&VarSet::from([0])),
            Err(PscsError::ContainsTarget { .. })
        ));
        assert!(matches!(
            run_pscs(&d, 3, 0.01, Limits::default()),
            Err(PscsError::InvalidVariable(3))
        ));
    }
}
