//! Greedy CART classifiers grown under a cross-entropy decrease threshold,
//! and the per-variable negative log likelihood score they induce.
//!
//! Splits are binary one-state-versus-rest tests on a single explanatory
//! variable. At every node all candidate splits over the allowed variables
//! are evaluated and the one with the largest decrease wins; ties go to the
//! lowest variable index, then the lowest state. A node is extended only
//! when the winning decrease is positive and at least the threshold. The
//! decrease is measured in nats per dataset row, i.e. the drop in the
//! node's summed leaf entropy divided by the total number of rows.
//!
//! Because the winning split only depends on the node's rows and on which
//! variables are allowed, retraining with any allowed set that still
//! contains every used variable reproduces the same tree exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::varset::VarSet;

#[derive(Debug, Error, PartialEq)]
pub enum CartError {
    #[error("objective variable {0} is also in the explanatory set")]
    TargetInExplanatory(usize),
    #[error("variable {var} out of range for a dataset with {num_variables} variables")]
    VariableOutOfRange { var: usize, num_variables: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("threshold must be non-negative, got {0}")]
    InvalidThreshold(f64),
}

/// Negative log likelihood in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub f64);

impl Score {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        var: usize,
        /// Rows with `var == state` go to `matched`, all others to `rest`.
        state: usize,
        /// Entropy decrease in nats per dataset row.
        decrease: f64,
        matched: usize,
        rest: usize,
    },
    Leaf {
        counts: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub target: usize,
    pub allowed: VarSet,
    pub threshold: f64,
    /// Node 0 is the root; children always have larger indices (preorder).
    pub nodes: Vec<Node>,
}

/// `sum_k c_k ln(n / c_k)` with `0 ln 0 = 0`.
fn entropy_mass(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (nf / c as f64).ln())
        .sum()
}

pub fn train_cart(
    data: &Dataset,
    target: usize,
    allowed: &VarSet,
    threshold: f64,
) -> Result<DecisionTree, CartError> {
    let nv = data.num_variables();
    if target >= nv {
        return Err(CartError::VariableOutOfRange {
            var: target,
            num_variables: nv,
        });
    }
    if let Some(v) = allowed.iter().find(|&v| v >= nv) {
        return Err(CartError::VariableOutOfRange {
            var: v,
            num_variables: nv,
        });
    }
    if allowed.contains(target) {
        return Err(CartError::TargetInExplanatory(target));
    }
    if data.num_rows() == 0 {
        return Err(CartError::EmptyDataset);
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(CartError::InvalidThreshold(threshold));
    }
    let mut grower = Grower {
        data,
        target,
        allowed: allowed.to_vec(),
        threshold,
        total_rows: data.num_rows() as f64,
        nodes: Vec::new(),
    };
    let rows: Vec<u32> = (0..data.num_rows() as u32).collect();
    grower.grow(rows);
    Ok(DecisionTree {
        target,
        allowed: allowed.clone(),
        threshold,
        nodes: grower.nodes,
    })
}

struct Grower<'a> {
    data: &'a Dataset,
    target: usize,
    allowed: Vec<usize>,
    threshold: f64,
    total_rows: f64,
    nodes: Vec<Node>,
}

struct Candidate {
    var: usize,
    state: usize,
    decrease: f64,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<u32>) -> usize {
        let k = self.data.states()[self.target];
        let mut counts = vec![0u64; k];
        for &r in &rows {
            counts[self.data.value(r as usize, self.target)] += 1;
        }
        let id = self.nodes.len();
        let best = self.best_split(&rows, &counts);
        match best {
            Some(c) if c.decrease > 0.0 && c.decrease >= self.threshold => {
                self.nodes.push(Node::Leaf { counts: Vec::new() });
                let (matched, rest): (Vec<u32>, Vec<u32>) = rows
                    .into_iter()
                    .partition(|&r| self.data.value(r as usize, c.var) == c.state);
                let m = self.grow(matched);
                let o = self.grow(rest);
                self.nodes[id] = Node::Split {
                    var: c.var,
                    state: c.state,
                    decrease: c.decrease,
                    matched: m,
                    rest: o,
                };
            }
            _ => self.nodes.push(Node::Leaf { counts }),
        }
        id
    }

    fn best_split(&self, rows: &[u32], counts: &[u64]) -> Option<Candidate> {
        let k = counts.len();
        let parent = entropy_mass(counts);
        if parent == 0.0 {
            return None;
        }
        let mut best: Option<Candidate> = None;
        let mut rest = vec![0u64; k];
        for &var in &self.allowed {
            let kw = self.data.states()[var];
            let mut table = vec![0u64; kw * k];
            for &r in rows {
                let r = r as usize;
                table[self.data.value(r, var) * k + self.data.value(r, self.target)] += 1;
            }
            for state in 0..kw {
                let matched = &table[state * k..(state + 1) * k];
                let m: u64 = matched.iter().sum();
                if m == 0 || m == rows.len() as u64 {
                    continue;
                }
                for ((o, &c), &mm) in rest.iter_mut().zip(counts).zip(matched) {
                    *o = c - mm;
                }
                let decrease =
                    (parent - entropy_mass(matched) - entropy_mass(&rest)) / self.total_rows;
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    best = Some(Candidate {
                        var,
                        state,
                        decrease,
                    });
                }
            }
        }
        best
    }
}

impl DecisionTree {
    /// The distinct split variables.
    pub fn used_variables(&self) -> VarSet {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { var, .. } => Some(*var),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn num_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len() - self.num_internal()
    }

    /// Training-set negative log likelihood under per-leaf maximum
    /// likelihood multinomials.
    pub fn score(&self) -> Score {
        Score(self.leaves().map(entropy_mass).sum())
    }

    /// Like [`DecisionTree::score`], with leaf parameters smoothed by a
    /// symmetric Dirichlet pseudo-count `alpha`.
    pub fn score_with_pseudo_count(&self, alpha: f64) -> Score {
        if alpha == 0.0 {
            return self.score();
        }
        Score(
            self.leaves()
                .map(|c| {
                    let k = c.len() as f64;
                    let n: u64 = c.iter().sum();
                    let denom = n as f64 + alpha * k;
                    c.iter()
                        .filter(|&&x| x > 0)
                        .map(|&x| -(x as f64) * ((x as f64 + alpha) / denom).ln())
                        .sum::<f64>()
                })
                .sum(),
        )
    }

    fn leaves(&self) -> impl Iterator<Item = &[u64]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts } => Some(counts.as_slice()),
            Node::Split { .. } => None,
        })
    }

    /// Index of the leaf that `row` is routed to.
    pub fn leaf_of(&self, data: &Dataset, row: usize) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    var,
                    state,
                    matched,
                    rest,
                    ..
                } => {
                    id = if data.value(row, *var) == *state {
                        *matched
                    } else {
                        *rest
                    };
                }
            }
        }
    }

    /// Same nodes, ignoring the allowed set the tree was trained with.
    pub fn same_structure(&self, other: &DecisionTree) -> bool {
        self.target == other.target && self.nodes == other.nodes
    }
}

/// Score of the single-leaf tree (no parents).
pub fn empty_score(data: &Dataset, target: usize) -> Score {
    let mut counts = vec![0u64; data.states()[target]];
    for r in 0..data.num_rows() {
        counts[data.value(r, target)] += 1;
    }
    Score(entropy_mass(&counts))
}
