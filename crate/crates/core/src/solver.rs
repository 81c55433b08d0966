//! QUBO minimizers: exhaustive Gray-code enumeration and simulated annealing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qubo::Qubo;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("{bits} bits exceeds the exhaustive cap of {cap}")]
    TooManyBits { bits: usize, cap: usize },
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("malformed assignment string: {0:?}")]
    BadAssignment(String),
}

pub const DEFAULT_EXHAUSTIVE_CAP: usize = 24;
const MAX_SAMPLES: usize = 16;
const RESYNC_INTERVAL: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exhaustive,
    Anneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    pub sweeps: usize,
    pub restarts: usize,
    /// Overrides for the automatic inverse-temperature range.
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub seed: u64,
}

impl Default for AnnealParams {
    fn default() -> Self {
        Self {
            sweeps: 10_000,
            restarts: 20,
            beta_min: None,
            beta_max: None,
            seed: 0,
        }
    }
}

impl AnnealParams {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidParams(m.into()));
        if self.sweeps == 0 || self.restarts == 0 {
            return bad("sweeps and restarts must be positive");
        }
        for b in [self.beta_min, self.beta_max].into_iter().flatten() {
            if !(b > 0.0 && b.is_finite()) {
                return bad("beta bounds must be positive and finite");
            }
        }
        if let (Some(lo), Some(hi)) = (self.beta_min, self.beta_max) {
            if lo > hi {
                return bad("beta_min exceeds beta_max");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub sweeps: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub assignment: String,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub method: Method,
    pub num_bits: usize,
    /// Bit `i` is character `i`, `'0'` or `'1'`.
    pub assignment: String,
    pub energy: f64,
    pub restart_energies: Vec<f64>,
    /// Distinct low-energy states, best first.
    pub samples: Vec<Sample>,
    pub seed: Option<u64>,
    pub schedule: Option<Schedule>,
}

impl SolveResult {
    pub fn bits(&self) -> Vec<bool> {
        parse_assignment(&self.assignment).expect("assignment produced by the solver")
    }
}

pub fn format_assignment(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_assignment(s: &str) -> Result<Vec<bool>, SolveError> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(SolveError::BadAssignment(s.into())),
        })
        .collect()
}

/// Incremental energy state: `h[i]` is the energy change coefficient of
/// bit `i`, so flipping it changes the energy by `(1 - 2 v_i) h_i`.
struct State<'a> {
    q: &'a Qubo,
    adj: &'a [Vec<(usize, f64)>],
    v: Vec<bool>,
    h: Vec<f64>,
    energy: f64,
}

impl<'a> State<'a> {
    fn new(q: &'a Qubo, adj: &'a [Vec<(usize, f64)>], v: Vec<bool>) -> Self {
        let mut s = Self {
            q,
            adj,
            v,
            h: vec![0.0; q.num_bits],
            energy: 0.0,
        };
        s.resync();
        s
    }

    fn resync(&mut self) {
        for i in 0..self.q.num_bits {
            self.h[i] = self.q.linear[i]
                + self.adj[i]
                    .iter()
                    .filter(|(j, _)| self.v[*j])
                    .map(|(_, w)| w)
                    .sum::<f64>();
        }
        self.energy = self.q.evaluate(&self.v);
    }

    fn delta(&self, i: usize) -> f64 {
        if self.v[i] {
            -self.h[i]
        } else {
            self.h[i]
        }
    }

    fn flip(&mut self, i: usize) {
        let d = self.delta(i);
        self.energy += d;
        let sign = if self.v[i] { -1.0 } else { 1.0 };
        self.v[i] = !self.v[i];
        for &(j, w) in &self.adj[i] {
            self.h[j] += sign * w;
        }
    }
}

/// Keeps the best distinct states, ordered by exact energy then assignment.
#[derive(Default)]
struct Pool {
    items: Vec<(f64, Vec<bool>)>,
}

impl Pool {
    fn worst(&self) -> f64 {
        if self.items.len() < MAX_SAMPLES {
            f64::INFINITY
        } else {
            self.items.last().map_or(f64::INFINITY, |x| x.0)
        }
    }

    /// `approx` is the incrementally tracked energy; exact re-evaluation
    /// decides membership.
    fn offer(&mut self, q: &Qubo, approx: f64, v: &[bool]) {
        let slack = 1e-9 * approx.abs().max(1.0);
        if approx > self.worst() + slack {
            return;
        }
        let e = q.evaluate(v);
        let key = |x: &(f64, Vec<bool>)| (x.0, x.1.clone());
        if self.items.iter().any(|x| x.1 == v) {
            return;
        }
        let pos = self
            .items
            .partition_point(|x| x.0 < e || (x.0 == e && x.1.as_slice() < v));
        self.items.insert(pos, (e, v.to_vec()));
        self.items.truncate(MAX_SAMPLES);
        debug_assert!(self.items.windows(2).all(|w| key(&w[0]) <= key(&w[1])));
    }

    fn merge(mut self, other: Pool) -> Pool {
        for (e, v) in other.items {
            if self.items.iter().any(|x| x.1 == v) {
                continue;
            }
            let pos = self
                .items
                .partition_point(|x| x.0 < e || (x.0 == e && x.1 < v));
            self.items.insert(pos, (e, v));
        }
        self.items.truncate(MAX_SAMPLES);
        self
    }
}

/// Exact minimum by enumerating all `2^I` assignments.
pub fn solve_exhaustive(q: &Qubo, cap: usize) -> Result<SolveResult, SolveError> {
    let n = q.num_bits;
    if n > cap {
        return Err(SolveError::TooManyBits { bits: n, cap });
    }
    let adj = q.adjacency();
    // The top `high` bits are fixed per parallel chunk; the rest are walked
    // in Gray-code order.
    let high = n.min(6);
    let low = n - high;
    let pool = (0u64..1 << high)
        .into_par_iter()
        .map(|prefix| {
            let mut v = vec![false; n];
            for b in 0..high {
                v[low + b] = prefix >> b & 1 == 1;
            }
            let mut s = State::new(q, &adj, v);
            let mut pool = Pool::default();
            pool.offer(q, s.energy, &s.v);
            for step in 1u64..1 << low {
                s.flip(step.trailing_zeros() as usize);
                if step % RESYNC_INTERVAL == 0 {
                    s.resync();
                }
                pool.offer(q, s.energy, &s.v);
            }
            pool
        })
        .reduce(Pool::default, Pool::merge);
    Ok(finish(Method::Exhaustive, n, pool, Vec::new(), None, None))
}

fn finish(
    method: Method,
    num_bits: usize,
    pool: Pool,
    restart_energies: Vec<f64>,
    seed: Option<u64>,
    schedule: Option<Schedule>,
) -> SolveResult {
    let (energy, best) = pool.items[0].clone();
    SolveResult {
        method,
        num_bits,
        assignment: format_assignment(&best),
        energy,
        restart_energies,
        samples: pool
            .items
            .iter()
            .map(|(e, v)| Sample {
                assignment: format_assignment(v),
                energy: *e,
            })
            .collect(),
        seed,
        schedule,
    }
}

/// Automatic inverse-temperature range: hot enough that the largest
/// possible single-flip change is accepted with probability `1/e`, cold
/// enough that the smallest nonzero coefficient is rarely climbed.
pub fn auto_beta_range(q: &Qubo) -> (f64, f64) {
    let adj = q.adjacency();
    let max_field = (0..q.num_bits)
        .map(|i| q.linear[i].abs() + adj[i].iter().map(|(_, w)| w.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let max_abs = q
        .linear
        .iter()
        .copied()
        .chain(q.quadratic.iter().map(|t| t.2))
        .fold(0.0f64, |m, w| m.max(w.abs()));
    let min_abs = q
        .linear
        .iter()
        .copied()
        .chain(q.quadratic.iter().map(|t| t.2))
        .map(f64::abs)
        .filter(|&w| w > 1e-9 * max_abs)
        .fold(f64::INFINITY, f64::min);
    if max_field == 0.0 || !min_abs.is_finite() {
        return (1.0, 1.0);
    }
    let lo = 1.0 / max_field;
    (lo, (10.0 / min_abs).max(lo))
}

/// Best-of-restarts single-flip Metropolis annealing with a geometric
/// inverse-temperature schedule. Restart `r` uses ChaCha8 seeded with
/// `seed` on stream `r`, so results do not depend on thread scheduling.
pub fn solve_anneal(q: &Qubo, params: &AnnealParams) -> Result<SolveResult, SolveError> {
    params.validate()?;
    let n = q.num_bits;
    let (auto_lo, auto_hi) = auto_beta_range(q);
    let beta_min = params.beta_min.unwrap_or(auto_lo);
    let beta_max = params.beta_max.unwrap_or(auto_hi).max(beta_min);
    let schedule = Schedule {
        beta_min,
        beta_max,
        sweeps: params.sweeps,
        restarts: params.restarts,
    };
    let adj = q.adjacency();
    let ratio = if params.sweeps > 1 {
        (beta_max / beta_min).powf(1.0 / (params.sweeps - 1) as f64)
    } else {
        1.0
    };

    let runs: Vec<Pool> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            let v = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let mut s = State::new(q, &adj, v);
            let mut pool = Pool::default();
            let mut best = s.energy;
            let mut best_v = s.v.clone();
            let mut beta = beta_min;
            for sweep in 0..params.sweeps {
                for i in 0..n {
                    let d = s.delta(i);
                    if d <= 0.0 || rng.random::<f64>() < (-beta * d).exp() {
                        s.flip(i);
                        if s.energy < best {
                            best = s.energy;
                            best_v.clone_from(&s.v);
                        }
                    }
                }
                if sweep % 64 == 63 {
                    s.resync();
                }
                beta *= ratio;
            }
            // Settle into a local minimum from the best visited state.
            let mut s = State::new(q, &adj, best_v);
            loop {
                let Some(i) = (0..n).find(|&i| s.delta(i) < 0.0) else {
                    break;
                };
                s.flip(i);
            }
            s.resync();
            pool.offer(q, s.energy, &s.v);
            pool
        })
        .collect();

    let restart_energies = runs.iter().map(|p| p.items[0].0).collect();
    let pool = runs.into_iter().fold(Pool::default(), Pool::merge);
    Ok(finish(
        Method::Anneal,
        n,
        pool,
        restart_energies,
        Some(params.seed),
        Some(schedule),
    ))
}
