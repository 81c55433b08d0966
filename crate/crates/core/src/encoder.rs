//! QUBO encoding of candidate-restricted structure learning.
//!
//! Each variable gets one-hot groups of candidate bits (one group for the
//! basic encoding, two for a direct-product split) whose energy reproduces
//! the variable's score, plus `C(N,2)` order bits `r_{a,b}` (`a < b`,
//! `r_{a,b} = 1` meaning `a` precedes `b`). Edge/order disagreement costs
//! `δ_{a,b}`, and intransitive order triples cost
//! `δ_{a,b,c} (r_ac + r_ab r_bc − r_ab r_ac − r_bc r_ac)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pscs::{CandidateList, PscsError};
use crate::qubo::{BitLabel, Qubo, QuboBuilder};
use crate::split::{SplitPlan, VariablePlan};
use crate::varset::VarSet;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("candidate list for variable {0} is partial; rerun selection with larger caps")]
    PartialList(usize),
    #[error("no variables to encode")]
    NoVariables,
    #[error("candidate list at position {position} is for variable {target}")]
    ListOrder { position: usize, target: usize },
    #[error("plan does not match the candidate lists: {0}")]
    PlanMismatch(String),
    #[error("invalid penalty weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Lookup(#[from] PscsError),
}

/// Fraction of the largest `|s|` used as the penalty floor.
pub const FLOOR_FRACTION: f64 = 0.01;
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    /// Sufficient lower bound, clamped at zero.
    pub delta_lower: f64,
    /// Base weight `δ`.
    pub delta: f64,
    /// Triangle weight `δ_{a,b,c} = 3δ`.
    pub triangle: f64,
    /// Order-coupling weight `δ_{n',n}`.
    pub order: f64,
    /// One-hot penalty `ξ`.
    pub xi: f64,
    pub margin: f64,
    pub floor: f64,
}

impl PenaltyWeights {
    /// Checks `δ_lower < ξ` and `δ_lower < δ_abc/3 = δ < δ_{n',n}/max(N−2,1)`.
    pub fn validate(&self, num_variables: usize) -> Result<(), EncodeError> {
        let bad = |m: String| Err(EncodeError::InvalidWeights(m));
        let all = [
            self.delta_lower,
            self.delta,
            self.triangle,
            self.order,
            self.xi,
        ];
        if all.iter().any(|w| !w.is_finite()) {
            return bad("weights must be finite".into());
        }
        if self.delta_lower >= self.xi {
            return bad(format!(
                "xi {} must exceed delta_lower {}",
                self.xi, self.delta_lower
            ));
        }
        if self.delta_lower >= self.delta {
            return bad(format!(
                "delta {} must exceed delta_lower {}",
                self.delta, self.delta_lower
            ));
        }
        if (self.triangle - 3.0 * self.delta).abs() > 1e-12 * self.triangle.abs().max(1.0) {
            return bad("triangle weight must equal 3 delta".into());
        }
        let scale = num_variables.saturating_sub(2).max(1) as f64;
        if self.delta >= self.order / scale {
            return bad(format!(
                "order weight {} too small for delta {}",
                self.order, self.delta
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightSpec {
    Auto { margin: f64 },
    Manual(PenaltyWeights),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Auto {
            margin: DEFAULT_MARGIN,
        }
    }
}

/// One one-hot group of candidate bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBlock {
    /// Candidate parent sets; index 0 is the empty set and has no bit.
    pub members: Vec<VarSet>,
    /// `bits[λ - 1]` is the bit of `members[λ]`.
    pub bits: Vec<usize>,
    /// `linear[λ - 1] = S(members[λ]) − S(∅)`.
    pub linear: Vec<f64>,
}

impl GroupBlock {
    fn unsplit() -> Self {
        Self {
            members: vec![VarSet::new()],
            bits: Vec::new(),
            linear: Vec::new(),
        }
    }
}

/// Score component of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableBlock {
    pub target: usize,
    /// `S(∅)`.
    pub base: f64,
    pub groups: [GroupBlock; 2],
    /// `cross[λ1 - 1][λ2 - 1] = S(U1 ∪ U2) − S(U1) − S(U2) + S(∅)`.
    pub cross: Vec<Vec<f64>>,
}

impl VariableBlock {
    /// `δ_lower` contribution: the largest gain from switching on one
    /// group's candidate given any choice in the other group.
    fn lower_bound(&self) -> f64 {
        let s1 = std::iter::once(0.0)
            .chain(self.groups[0].linear.iter().copied())
            .collect::<Vec<_>>();
        let s2 = std::iter::once(0.0)
            .chain(self.groups[1].linear.iter().copied())
            .collect::<Vec<_>>();
        let t = |a: usize, b: usize| {
            if a == 0 || b == 0 {
                0.0
            } else {
                self.cross[a - 1][b - 1]
            }
        };
        let mut best = f64::NEG_INFINITY;
        for (a, &x) in s1.iter().enumerate() {
            for (b, &y) in s2.iter().enumerate() {
                best = best.max(-x - t(a, b)).max(-y - t(a, b));
            }
        }
        best
    }

    fn max_abs_linear(&self) -> f64 {
        self.groups
            .iter()
            .flat_map(|g| g.linear.iter())
            .fold(0.0, |m, s| m.max(s.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Basic,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub kind: EncodingKind,
    pub num_variables: usize,
    pub weights: PenaltyWeights,
    pub variables: Vec<VariableBlock>,
    /// Bit index of `r_{0,1}`; order bits follow in `(a, b)` lexicographic order.
    pub order_offset: usize,
    pub qubo: Qubo,
}

/// Energy split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub score: f64,
    pub one_hot: f64,
    pub order: f64,
    pub triangle: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.score + self.one_hot + self.order + self.triangle
    }

    pub fn penalty(&self) -> f64 {
        self.one_hot + self.order + self.triangle
    }
}

/// Index of `r_{a,b}` among the order bits, for `a < b < n`.
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Triangle violation `R_{a,b,c}` for `a < b < c` given the three order bits.
pub fn triangle_violation(r_ab: bool, r_bc: bool, r_ac: bool) -> i64 {
    let (ab, bc, ac) = (r_ab as i64, r_bc as i64, r_ac as i64);
    ac + ab * bc - ab * ac - bc * ac
}

fn check_lists(lists: &[CandidateList]) -> Result<(), EncodeError> {
    if lists.is_empty() {
        return Err(EncodeError::NoVariables);
    }
    for (i, l) in lists.iter().enumerate() {
        if l.target != i {
            return Err(EncodeError::ListOrder {
                position: i,
                target: l.target,
            });
        }
        if !l.complete {
            return Err(EncodeError::PartialList(i));
        }
    }
    Ok(())
}

/// Score blocks for the basic encoding (no bit indices assigned yet).
pub fn basic_blocks(lists: &[CandidateList]) -> Result<Vec<VariableBlock>, EncodeError> {
    check_lists(lists)?;
    Ok(lists
        .iter()
        .map(|l| {
            let base = l.empty_score().value();
            let members: Vec<VarSet> = l.family.iter().map(|m| m.set.clone()).collect();
            let linear = l.family[1..]
                .iter()
                .map(|m| m.score.value() - base)
                .collect();
            VariableBlock {
                target: l.target,
                base,
                groups: [
                    GroupBlock::unsplit(),
                    GroupBlock {
                        members,
                        bits: Vec::new(),
                        linear,
                    },
                ],
                cross: Vec::new(),
            }
        })
        .collect())
}

/// Score blocks for a split plan, with every needed score from span lookups.
pub fn split_blocks(
    lists: &[CandidateList],
    plan: &SplitPlan,
) -> Result<Vec<VariableBlock>, EncodeError> {
    check_lists(lists)?;
    if plan.variables.len() != lists.len() {
        return Err(EncodeError::PlanMismatch(format!(
            "{} plan entries for {} variables",
            plan.variables.len(),
            lists.len()
        )));
    }
    lists
        .iter()
        .zip(&plan.variables)
        .map(|(l, p)| split_block(l, p))
        .collect()
}

fn split_block(list: &CandidateList, plan: &VariablePlan) -> Result<VariableBlock, EncodeError> {
    if plan.target != list.target {
        return Err(EncodeError::PlanMismatch(format!(
            "plan for {} paired with list for {}",
            plan.target, list.target
        )));
    }
    for f in [&plan.family1, &plan.family2] {
        if f.first().is_none_or(|s| !s.is_empty()) {
            return Err(EncodeError::PlanMismatch(
                "group families must start with the empty set".into(),
            ));
        }
    }
    let score = |s: &VarSet| -> Result<f64, EncodeError> { Ok(list.lookup(s)?.score.value()) };
    let base = score(&VarSet::new())?;
    let s1: Vec<f64> = plan.family1[1..]
        .iter()
        .map(|u| Ok(score(u)? - base))
        .collect::<Result<_, EncodeError>>()?;
    let s2: Vec<f64> = plan.family2[1..]
        .iter()
        .map(|u| Ok(score(u)? - base))
        .collect::<Result<_, EncodeError>>()?;
    let mut cross = Vec::with_capacity(s1.len());
    for (a, u1) in plan.family1[1..].iter().enumerate() {
        let mut row = Vec::with_capacity(s2.len());
        for (b, u2) in plan.family2[1..].iter().enumerate() {
            let joint = score(&u1.union(u2))?;
            row.push(joint - (s1[a] + base) - (s2[b] + base) + base);
        }
        cross.push(row);
    }
    Ok(VariableBlock {
        target: list.target,
        base,
        groups: [
            GroupBlock {
                members: plan.family1.clone(),
                bits: Vec::new(),
                linear: s1,
            },
            GroupBlock {
                members: plan.family2.clone(),
                bits: Vec::new(),
                linear: s2,
            },
        ],
        cross,
    })
}

/// Sufficient penalty weights for the given score blocks.
pub fn penalty_weights(blocks: &[VariableBlock], margin: f64) -> PenaltyWeights {
    let n = blocks.len();
    let delta_lower = blocks
        .iter()
        .map(VariableBlock::lower_bound)
        .fold(0.0f64, f64::max);
    let max_s = blocks
        .iter()
        .map(VariableBlock::max_abs_linear)
        .fold(0.0f64, f64::max);
    let floor = if max_s > 0.0 {
        FLOOR_FRACTION * max_s
    } else {
        1.0
    };
    let delta = (1.0 + margin) * delta_lower.max(floor);
    PenaltyWeights {
        delta_lower,
        delta,
        triangle: 3.0 * delta,
        order: (1.0 + margin) * n.saturating_sub(2).max(1) as f64 * delta,
        xi: delta,
        margin,
        floor,
    }
}

fn resolve_weights(
    blocks: &[VariableBlock],
    spec: WeightSpec,
) -> Result<PenaltyWeights, EncodeError> {
    let w = match spec {
        WeightSpec::Auto { margin } => {
            if !(margin > 0.0 && margin.is_finite()) {
                return Err(EncodeError::InvalidWeights(format!(
                    "margin must be positive, got {margin}"
                )));
            }
            penalty_weights(blocks, margin)
        }
        WeightSpec::Manual(w) => w,
    };
    w.validate(blocks.len())?;
    Ok(w)
}

pub fn encode_basic(lists: &[CandidateList], weights: WeightSpec) -> Result<Encoding, EncodeError> {
    let blocks = basic_blocks(lists)?;
    let w = resolve_weights(&blocks, weights)?;
    Ok(assemble(EncodingKind::Basic, blocks, w))
}

pub fn encode_split(
    lists: &[CandidateList],
    plan: &SplitPlan,
    weights: WeightSpec,
) -> Result<Encoding, EncodeError> {
    let blocks = split_blocks(lists, plan)?;
    let w = resolve_weights(&blocks, weights)?;
    Ok(assemble(EncodingKind::Split, blocks, w))
}

/// Allocates bits and emits every term. Term order is fixed so that the
/// basic encoding and a split with all `Z_n = ∅` produce identical
/// coefficients.
pub fn assemble(kind: EncodingKind, mut blocks: Vec<VariableBlock>, w: PenaltyWeights) -> Encoding {
    let n = blocks.len();
    let mut b = QuboBuilder::new();
    for blk in &mut blocks {
        for (g, group) in blk.groups.iter_mut().enumerate() {
            group.bits = (1..group.members.len())
                .map(|lambda| {
                    let var = blk.target;
                    b.add_bit(match (kind, g) {
                        (EncodingKind::Basic, _) => BitLabel::P { var, lambda },
                        (EncodingKind::Split, 0) => BitLabel::P1 { var, lambda },
                        (EncodingKind::Split, _) => BitLabel::P2 { var, lambda },
                    })
                })
                .collect();
        }
    }
    let order_offset = b.num_bits();
    for a in 0..n {
        for c in a + 1..n {
            b.add_bit(BitLabel::R { lo: a, hi: c });
        }
    }
    let r = |a: usize, c: usize| order_offset + pair_index(n, a, c);

    // Score component.
    for blk in &blocks {
        b.add_constant(blk.base);
        for g in &blk.groups {
            for (&bit, &s) in g.bits.iter().zip(&g.linear) {
                b.add_linear(bit, s);
            }
        }
        for (i, row) in blk.cross.iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                b.add_quadratic(blk.groups[0].bits[i], blk.groups[1].bits[j], t);
            }
        }
        for g in &blk.groups {
            for (i, &x) in g.bits.iter().enumerate() {
                for &y in &g.bits[i + 1..] {
                    b.add_quadratic(x, y, w.xi);
                }
            }
        }
    }

    // Edge/order coupling: an edge parent -> child must agree with the order.
    for blk in &blocks {
        let child = blk.target;
        for g in &blk.groups {
            for (bit, members) in g.bits.iter().zip(&g.members[1..]) {
                for parent in members.iter() {
                    if parent < child {
                        // q_{parent,child} (1 − r_{parent,child})
                        let rb = r(parent, child);
                        b.add_linear(*bit, w.order);
                        b.add_quadratic(*bit, rb, -w.order);
                    } else {
                        // q_{parent,child} r_{child,parent}
                        b.add_quadratic(*bit, r(child, parent), w.order);
                    }
                }
            }
        }
    }

    // Transitivity of the order.
    for a in 0..n {
        for bb in a + 1..n {
            for c in bb + 1..n {
                let (ab, bc, ac) = (r(a, bb), r(bb, c), r(a, c));
                b.add_linear(ac, w.triangle);
                b.add_quadratic(ab, bc, w.triangle);
                b.add_quadratic(ab, ac, -w.triangle);
                b.add_quadratic(bc, ac, -w.triangle);
            }
        }
    }

    Encoding {
        kind,
        num_variables: n,
        weights: w,
        variables: blocks,
        order_offset,
        qubo: b.build(),
    }
}

impl Encoding {
    pub fn num_bits(&self) -> usize {
        self.qubo.num_bits
    }

    pub fn score_bits(&self) -> usize {
        self.order_offset
    }

    pub fn order_bit(&self, a: usize, b: usize) -> usize {
        self.order_offset + pair_index(self.num_variables, a, b)
    }

    /// Energy recomputed term by term from the structured blocks, split by
    /// source. Independent of the aggregated QUBO coefficients.
    pub fn energy_parts(&self, v: &[bool]) -> EnergyParts {
        let n = self.num_variables;
        let w = &self.weights;
        let mut parts = EnergyParts::default();
        let mut edges = vec![vec![0u32; n]; n];
        for blk in &self.variables {
            parts.score += blk.base;
            for g in &blk.groups {
                let on: Vec<usize> = (0..g.bits.len()).filter(|&i| v[g.bits[i]]).collect();
                for &i in &on {
                    parts.score += g.linear[i];
                    for p in g.members[i + 1].iter() {
                        edges[p][blk.target] += 1;
                    }
                }
                let k = on.len() as f64;
                parts.one_hot += w.xi * k * (k - 1.0) / 2.0;
            }
            for (i, row) in blk.cross.iter().enumerate() {
                if !v[blk.groups[0].bits[i]] {
                    continue;
                }
                for (j, &t) in row.iter().enumerate() {
                    if v[blk.groups[1].bits[j]] {
                        parts.score += t;
                    }
                }
            }
        }
        for a in 0..n {
            for c in a + 1..n {
                let rac = v[self.order_bit(a, c)];
                let bad = if rac { edges[c][a] } else { edges[a][c] };
                parts.order += w.order * bad as f64;
            }
        }
        for a in 0..n {
            for bb in a + 1..n {
                for c in bb + 1..n {
                    let viol = triangle_violation(
                        v[self.order_bit(a, bb)],
                        v[self.order_bit(bb, c)],
                        v[self.order_bit(a, c)],
                    );
                    parts.triangle += w.triangle * viol as f64;
                }
            }
        }
        parts
    }

    /// Builds the assignment selecting `choices[n] = (λ1, λ2)` (0 = no bit)
    /// with order bits set from the total order `order` (first = earliest).
    pub fn assignment(&self, choices: &[(usize, usize)], order: &[usize]) -> Vec<bool> {
        let mut v = vec![false; self.num_bits()];
        for (blk, &(l1, l2)) in self.variables.iter().zip(choices) {
            for (g, l) in blk.groups.iter().zip([l1, l2]) {
                if l > 0 {
                    v[g.bits[l - 1]] = true;
                }
            }
        }
        let mut pos = vec![0usize; self.num_variables];
        for (i, &x) in order.iter().enumerate() {
            pos[x] = i;
        }
        for a in 0..self.num_variables {
            for c in a + 1..self.num_variables {
                v[self.order_bit(a, c)] = pos[a] < pos[c];
            }
        }
        v
    }

    /// Nonzero score-component terms per variable against the closed-form
    /// estimate `½(Λ1 + Λ2 − ½)² − 9/8`.
    pub fn term_report(&self) -> TermReport {
        let per_variable = self
            .variables
            .iter()
            .map(|blk| {
                let nz = |x: &f64| *x != 0.0;
                let lin = blk
                    .groups
                    .iter()
                    .map(|g| g.linear.iter().filter(|x| nz(x)).count())
                    .sum::<usize>();
                let cross = blk.cross.iter().flatten().filter(|x| nz(x)).count();
                let one_hot = blk
                    .groups
                    .iter()
                    .map(|g| g.bits.len() * g.bits.len().saturating_sub(1) / 2)
                    .sum::<usize>();
                let l = (blk.groups[0].members.len() + blk.groups[1].members.len()) as f64;
                VariableTerms {
                    target: blk.target,
                    actual: lin + cross + one_hot,
                    estimate: 0.5 * (l - 0.5).powi(2) - 9.0 / 8.0,
                }
            })
            .collect();
        TermReport {
            per_variable,
            total_nonzero: self.qubo.num_terms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableTerms {
    pub target: usize,
    pub actual: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub per_variable: Vec<VariableTerms>,
    pub total_nonzero: usize,
}

/// Bits the prior full encoding needs: `N(N−1)` edge bits, `C(N,2)` order
/// bits and `N⌈log2(M+1)⌉` parent-count bits.
pub fn full_encoding_bits(num_variables: usize, max_parents: usize) -> usize {
    let n = num_variables;
    let mu = usize::BITS as usize - max_parents.leading_zeros() as usize; // ceil(log2(M+1))
    n * n.saturating_sub(1) + n * n.saturating_sub(1) / 2 + n * mu
}
