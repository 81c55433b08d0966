//! Quadratic pseudo-Boolean functions
//! `H(v) = w0 + sum_i w_i v_i + sum_{i<j} w_ij v_i v_j` over labeled bits,
//! with JSON and plain-text coordinate serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuboError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid qubo: {0}")]
    Invalid(String),
}

/// What a bit means in the structure-learning encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BitLabel {
    /// Candidate `lambda` of variable `var` (basic encoding).
    P { var: usize, lambda: usize },
    /// Candidate `lambda` of the first split group of `var`.
    P1 { var: usize, lambda: usize },
    /// Candidate `lambda` of the second split group of `var`.
    P2 { var: usize, lambda: usize },
    /// Order bit: 1 when `lo` precedes `hi`.
    R { lo: usize, hi: usize },
}

impl BitLabel {
    fn to_text(self) -> String {
        match self {
            BitLabel::P { var, lambda } => format!("p {var} {lambda}"),
            BitLabel::P1 { var, lambda } => format!("p1 {var} {lambda}"),
            BitLabel::P2 { var, lambda } => format!("p2 {var} {lambda}"),
            BitLabel::R { lo, hi } => format!("r {lo} {hi}"),
        }
    }

    fn from_text(kind: &str, a: usize, b: usize) -> Option<Self> {
        Some(match kind {
            "p" => BitLabel::P { var: a, lambda: b },
            "p1" => BitLabel::P1 { var: a, lambda: b },
            "p2" => BitLabel::P2 { var: a, lambda: b },
            "r" => BitLabel::R { lo: a, hi: b },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qubo {
    pub num_bits: usize,
    pub constant: f64,
    pub linear: Vec<f64>,
    /// `(i, j, w)` with `i < j`, sorted, no duplicate pairs.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub labels: Vec<BitLabel>,
}

impl Qubo {
    pub fn validate(&self) -> Result<(), QuboError> {
        if self.linear.len() != self.num_bits || self.labels.len() != self.num_bits {
            return Err(QuboError::Invalid(format!(
                "{} bits but {} linear terms and {} labels",
                self.num_bits,
                self.linear.len(),
                self.labels.len()
            )));
        }
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j, _) in &self.quadratic {
            if i >= j || j >= self.num_bits {
                return Err(QuboError::Invalid(format!("bad quadratic key ({i}, {j})")));
            }
            if prev.is_some_and(|p| p >= (i, j)) {
                return Err(QuboError::Invalid(
                    "quadratic keys not strictly sorted".into(),
                ));
            }
            prev = Some((i, j));
        }
        Ok(())
    }

    /// Direct evaluation of the polynomial.
    pub fn evaluate(&self, v: &[bool]) -> f64 {
        assert_eq!(v.len(), self.num_bits, "assignment length mismatch");
        let lin: f64 = self
            .linear
            .iter()
            .zip(v)
            .filter(|(_, &b)| b)
            .map(|(w, _)| *w)
            .sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .filter(|&&(i, j, _)| v[i] && v[j])
            .map(|&(_, _, w)| w)
            .sum();
        self.constant + lin + quad
    }

    /// Per-bit neighbor lists `(other, w)` of the quadratic terms.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.num_bits];
        for &(i, j, w) in &self.quadratic {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }

    /// Count of nonzero linear and quadratic coefficients.
    pub fn num_terms(&self) -> usize {
        self.linear.iter().filter(|w| **w != 0.0).count()
            + self.quadratic.iter().filter(|t| t.2 != 0.0).count()
    }

    /// Coordinate text format: `#` header lines carry the bit count,
    /// constant and labels; then one `i i w` line per linear term and one
    /// `i j w` line per quadratic term. Floats use the shortest
    /// round-trip representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# qubo").unwrap();
        writeln!(s, "# num_bits {}", self.num_bits).unwrap();
        writeln!(s, "# constant {:?}", self.constant).unwrap();
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(s, "# label {i} {}", l.to_text()).unwrap();
        }
        for (i, w) in self.linear.iter().enumerate() {
            writeln!(s, "{i} {i} {w:?}").unwrap();
        }
        for (i, j, w) in &self.quadratic {
            writeln!(s, "{i} {j} {w:?}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, QuboError> {
        let mut num_bits: Option<usize> = None;
        let mut constant = 0.0;
        let mut labels: BTreeMap<usize, BitLabel> = BTreeMap::new();
        let mut linear: BTreeMap<usize, f64> = BTreeMap::new();
        let mut quadratic: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let err = |msg: &str| QuboError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let f: Vec<&str> = rest.split_whitespace().collect();
                match f.as_slice() {
                    ["num_bits", n] => num_bits = Some(n.parse().map_err(|_| err("bad num_bits"))?),
                    ["constant", w] => constant = w.parse().map_err(|_| err("bad constant"))?,
                    ["label", i, kind, a, b] => {
                        let i: usize = i.parse().map_err(|_| err("bad label index"))?;
                        let a = a.parse().map_err(|_| err("bad label field"))?;
                        let b = b.parse().map_err(|_| err("bad label field"))?;
                        let l = BitLabel::from_text(kind, a, b)
                            .ok_or_else(|| err("unknown label kind"))?;
                        labels.insert(i, l);
                    }
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [i, j, w] = f.as_slice() else {
                return Err(err("expected `i j w`"));
            };
            let i: usize = i.parse().map_err(|_| err("bad index"))?;
            let j: usize = j.parse().map_err(|_| err("bad index"))?;
            let w: f64 = w.parse().map_err(|_| err("bad weight"))?;
            let dup = if i == j {
                linear.insert(i, w).is_some()
            } else {
                quadratic.insert((i.min(j), i.max(j)), w).is_some()
            };
            if dup {
                return Err(err("duplicate coefficient"));
            }
        }
        let num_bits = num_bits.ok_or(QuboError::Parse {
            line: 0,
            msg: "missing num_bits".into(),
        })?;
        let mut lin = vec![0.0; num_bits];
        for (i, w) in linear {
            *lin.get_mut(i)
                .ok_or_else(|| QuboError::Invalid(format!("bit {i} out of range")))? = w;
        }
        let labels: Vec<BitLabel> = labels.into_values().collect();
        let q = Qubo {
            num_bits,
            constant,
            linear: lin,
            quadratic: quadratic.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
            labels,
        };
        q.validate()?;
        Ok(q)
    }
}

/// Accumulates terms; repeated contributions to one coefficient are summed
/// in insertion order.
#[derive(Debug, Default)]
pub struct QuboBuilder {
    constant: f64,
    linear: Vec<f64>,
    quadratic: BTreeMap<(usize, usize), f64>,
    labels: Vec<BitLabel>,
}

impl QuboBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_bit(&mut self, label: BitLabel) -> usize {
        self.linear.push(0.0);
        self.labels.push(label);
        self.linear.len() - 1
    }

    pub fn num_bits(&self) -> usize {
        self.linear.len()
    }

    pub fn add_constant(&mut self, w: f64) {
        self.constant += w;
    }

    pub fn add_linear(&mut self, i: usize, w: f64) {
        self.linear[i] += w;
    }

    /// `w * v_i * v_j`; `i == j` folds into the linear term since `v^2 = v`.
    pub fn add_quadratic(&mut self, i: usize, j: usize, w: f64) {
        if i == j {
            self.add_linear(i, w);
        } else {
            *self.quadratic.entry((i.min(j), i.max(j))).or_default() += w;
        }
    }

    /// Finalizes, dropping quadratic coefficients that summed to zero.
    pub fn build(self) -> Qubo {
        Qubo {
            num_bits: self.linear.len(),
            constant: self.constant,
            linear: self.linear,
            quadratic: self
                .quadratic
                .into_iter()
                .filter(|(_, w)| *w != 0.0)
                .map(|((i, j), w)| (i, j, w))
                .collect(),
            labels: self.labels,
        }
    }
}
