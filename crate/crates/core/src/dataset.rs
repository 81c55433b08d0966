//! Discrete tabular datasets: CSV ingestion with discretization, JSON
//! sidecars, and synthetic generation from random Bayesian networks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;
use crate::varset::VarSet;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no rows left after removing rows with missing values")]
    NoRows,
    #[error("only {0} column(s) survived discretization, need at least 2")]
    TooFewColumns(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// State index of a single cell.
pub type StateIndex = u16;

/// An immutable discrete data matrix.
///
/// Cells are stored row-major; `cells[row * num_variables + var]` is the
/// state of `var` in `row` and always lies in `0..states[var]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetFile", into = "DatasetFile")]
pub struct Dataset {
    names: Vec<String>,
    states: Vec<usize>,
    cells: Vec<StateIndex>,
    num_rows: usize,
    state_labels: Vec<Vec<String>>,
    source_columns: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    names: Vec<String>,
    states: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    state_labels: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    source_columns: Vec<usize>,
    rows: Vec<Vec<StateIndex>>,
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = DatasetError;

    fn try_from(f: DatasetFile) -> Result<Self> {
        let n = f.names.len();
        let mut cells = Vec::with_capacity(f.rows.len() * n);
        for (i, row) in f.rows.iter().enumerate() {
            if row.len() != n {
                return Err(DatasetError::Invalid(format!(
                    "row {i} has {} cells, expected {n}",
                    row.len()
                )));
            }
            cells.extend_from_slice(row);
        }
        let mut d = Dataset::new(f.names, f.states, cells)?;
        if !f.state_labels.is_empty() {
            d = d.with_state_labels(f.state_labels)?;
        }
        if !f.source_columns.is_empty() {
            if f.source_columns.len() != n {
                return Err(DatasetError::Invalid(
                    "source_columns length mismatch".into(),
                ));
            }
            d.source_columns = f.source_columns;
        }
        Ok(d)
    }
}

impl From<Dataset> for DatasetFile {
    fn from(d: Dataset) -> Self {
        let n = d.names.len();
        let rows = if n == 0 {
            Vec::new()
        } else {
            d.cells.chunks(n).map(<[StateIndex]>::to_vec).collect()
        };
        DatasetFile {
            names: d.names,
            states: d.states,
            state_labels: d.state_labels,
            source_columns: d.source_columns,
            rows,
        }
    }
}

impl Dataset {
    /// Validates and builds a dataset from row-major cells.
    pub fn new(names: Vec<String>, states: Vec<usize>, cells: Vec<StateIndex>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(DatasetError::Invalid("no variables".into()));
        }
        if states.len() != n {
            return Err(DatasetError::Invalid(format!(
                "{} state counts for {n} variables",
                states.len()
            )));
        }
        if let Some(v) = states.iter().position(|&s| s < 2) {
            return Err(DatasetError::Invalid(format!(
                "variable {v} has {} state(s), need at least 2",
                states[v]
            )));
        }
        if cells.is_empty() || !cells.len().is_multiple_of(n) {
            return Err(DatasetError::Invalid(format!(
                "{} cells do not form a non-empty {n}-column matrix",
                cells.len()
            )));
        }
        for (i, &c) in cells.iter().enumerate() {
            let v = i % n;
            if c as usize >= states[v] {
                return Err(DatasetError::Invalid(format!(
                    "row {} variable {v}: state {c} out of range 0..{}",
                    i / n,
                    states[v]
                )));
            }
        }
        let state_labels = states
            .iter()
            .map(|&k| (0..k).map(|s| s.to_string()).collect())
            .collect();
        Ok(Self {
            num_rows: cells.len() / n,
            source_columns: (0..n).collect(),
            names,
            states,
            cells,
            state_labels,
        })
    }

    pub fn with_state_labels(mut self, labels: Vec<Vec<String>>) -> Result<Self> {
        if labels.len() != self.num_variables()
            || labels.iter().zip(&self.states).any(|(l, &k)| l.len() != k)
        {
            return Err(DatasetError::Invalid("state label shape mismatch".into()));
        }
        self.state_labels = labels;
        Ok(self)
    }

    pub fn num_variables(&self) -> usize {
        self.names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn state_labels(&self) -> &[Vec<String>] {
        &self.state_labels
    }

    /// Index of the original CSV column each variable came from.
    pub fn source_columns(&self) -> &[usize] {
        &self.source_columns
    }

    #[inline]
    pub fn value(&self, row: usize, var: usize) -> usize {
        self.cells[row * self.names.len() + var] as usize
    }

    pub fn row(&self, row: usize) -> &[StateIndex] {
        let n = self.names.len();
        &self.cells[row * n..(row + 1) * n]
    }

    pub fn cells(&self) -> &[StateIndex] {
        &self.cells
    }

    /// Every variable index except `n`.
    pub fn others(&self, n: usize) -> VarSet {
        VarSet::full(self.num_variables()).without(n)
    }

    /// Same names, cardinalities and cells; labels and column mapping ignored.
    pub fn same_contents(&self, other: &Dataset) -> bool {
        self.names == other.names && self.states == other.states && self.cells == other.cells
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = create(path)?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = open(path)?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    /// Writes a header row of names followed by state indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for r in 0..self.num_rows {
            out.write_record(self.row(r).iter().map(|c| c.to_string()))?;
        }
        out.flush().map_err(|e| DatasetError::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// How raw CSV columns become discrete variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizeConfig {
    /// Number of quantile bins for continuous columns.
    pub bins: usize,
    /// Categorical columns with more distinct values than this are dropped.
    pub max_states: usize,
    /// Cell values treated as missing (compared after trimming).
    pub missing_tokens: Vec<String>,
}

impl Default for DiscretizeConfig {
    fn default() -> Self {
        Self {
            bins: 3,
            max_states: 4,
            missing_tokens: ["", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Why a CSV column did or did not become a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnFate {
    Categorical {
        variable: usize,
    },
    Binned {
        variable: usize,
        thresholds: Vec<f64>,
    },
    DroppedConstant,
    DroppedTooManyStates {
        distinct: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: usize,
    pub name: String,
    pub fate: ColumnFate,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub columns: Vec<ColumnReport>,
    pub dropped_rows: usize,
}

enum Kind {
    Continuous,
    Categorical { numeric: bool },
}

pub fn ingest_csv(path: &Path, config: &DiscretizeConfig) -> Result<Ingested> {
    ingest_reader(open(path)?, config)
}

pub fn ingest_reader<R: Read>(reader: R, config: &DiscretizeConfig) -> Result<Ingested> {
    if config.bins < 2 || config.max_states < 2 {
        return Err(DatasetError::Invalid(
            "bins and max_states must both be at least 2".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let missing: BTreeSet<&str> = config.missing_tokens.iter().map(String::as_str).collect();
    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        raw.push(
            rec.iter()
                .map(|c| {
                    let c = c.trim();
                    (!missing.contains(c)).then(|| c.to_string())
                })
                .collect(),
        );
    }
    let ncols = header.len();

    // Classify each column on its non-missing values.
    let mut kinds: Vec<Option<Kind>> = Vec::with_capacity(ncols);
    let mut reports: Vec<ColumnReport> = Vec::with_capacity(ncols);
    for (c, name) in header.iter().enumerate() {
        let present: Vec<&str> = raw.iter().filter_map(|r| r[c].as_deref()).collect();
        let numeric = !present.is_empty()
            && present
                .iter()
                .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite));
        let distinct = distinct_count(&present, numeric);
        let (kind, fate) = if distinct < 2 {
            (None, Some(ColumnFate::DroppedConstant))
        } else if distinct <= config.max_states {
            (Some(Kind::Categorical { numeric }), None)
        } else if numeric {
            (Some(Kind::Continuous), None)
        } else {
            (None, Some(ColumnFate::DroppedTooManyStates { distinct }))
        };
        kinds.push(kind);
        reports.push(ColumnReport {
            column: c,
            name: name.clone(),
            fate: fate.unwrap_or(ColumnFate::DroppedConstant),
        });
    }

    let kept: Vec<usize> = (0..ncols).filter(|&c| kinds[c].is_some()).collect();
    let rows: Vec<&Vec<Option<String>>> = raw
        .iter()
        .filter(|r| kept.iter().all(|&c| r[c].is_some()))
        .collect();
    let dropped_rows = raw.len() - rows.len();
    if rows.is_empty() {
        return Err(DatasetError::NoRows);
    }

    let mut names = Vec::new();
    let mut states = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<StateIndex>> = Vec::new();
    let mut source = Vec::new();
    for &c in &kept {
        let values: Vec<&str> = rows.iter().map(|r| r[c].as_deref().unwrap()).collect();
        let (codes, lab, fate_thresholds) = match kinds[c].as_ref().unwrap() {
            Kind::Continuous => {
                let xs: Vec<f64> = values.iter().map(|v| v.parse().unwrap()).collect();
                let (codes, lab, th) = quantile_bin(&xs, config.bins);
                (codes, lab, Some(th))
            }
            Kind::Categorical { numeric } => {
                let (codes, lab) = categorical_codes(&values, *numeric);
                (codes, lab, None)
            }
        };
        if lab.len() < 2 {
            reports[c].fate = ColumnFate::DroppedConstant;
            continue;
        }
        let variable = names.len();
        reports[c].fate = match fate_thresholds {
            Some(thresholds) => ColumnFate::Binned {
                variable,
                thresholds,
            },
            None => ColumnFate::Categorical { variable },
        };
        names.push(header[c].clone());
        states.push(lab.len());
        labels.push(lab);
        columns.push(codes);
        source.push(c);
    }
    if names.len() < 2 {
        return Err(DatasetError::TooFewColumns(names.len()));
    }
    let n = names.len();
    let mut cells = Vec::with_capacity(rows.len() * n);
    for r in 0..rows.len() {
        cells.extend(columns.iter().map(|col| col[r]));
    }
    let mut dataset = Dataset::new(names, states, cells)?.with_state_labels(labels)?;
    dataset.source_columns = source;
    Ok(Ingested {
        dataset,
        columns: reports,
        dropped_rows,
    })
}

fn distinct_count(values: &[&str], numeric: bool) -> usize {
    if numeric {
        let mut xs: Vec<f64> = values.iter().map(|v| v.parse().unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    } else {
        values.iter().collect::<BTreeSet<_>>().len()
    }
}

fn categorical_codes(values: &[&str], numeric: bool) -> (Vec<StateIndex>, Vec<String>) {
    if numeric {
        let mut uniq: Vec<(f64, &str)> = values.iter().map(|v| (v.parse().unwrap(), *v)).collect();
        uniq.sort_by(|a, b| a.0.total_cmp(&b.0));
        uniq.dedup_by(|a, b| a.0 == b.0);
        let codes = values
            .iter()
            .map(|v| {
                let x: f64 = v.parse().unwrap();
                uniq.partition_point(|u| u.0 < x) as StateIndex
            })
            .collect();
        (codes, uniq.into_iter().map(|u| u.1.to_string()).collect())
    } else {
        let map: BTreeMap<&str, usize> = values
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        let codes = values.iter().map(|v| map[v] as StateIndex).collect();
        (codes, map.keys().map(|k| k.to_string()).collect())
    }
}

/// Cut points for `bins` equal-frequency bins; cut `b` is the order
/// statistic at position `ceil(b * n / bins) - 1`.
pub fn quantile_thresholds(xs: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..bins)
        .map(|b| sorted[(b * n).div_ceil(bins).saturating_sub(1)])
        .collect()
}

/// Raw bin of `x`: the number of cut points strictly below it, so values
/// equal to a cut point fall in the lower bin.
pub fn raw_bin(x: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| t < x).count()
}

/// Quantile-bins `xs`, then renumbers occupied bins densely in order.
fn quantile_bin(xs: &[f64], bins: usize) -> (Vec<StateIndex>, Vec<String>, Vec<f64>) {
    let thresholds = quantile_thresholds(xs, bins);
    let raw: Vec<usize> = xs.iter().map(|&x| raw_bin(x, &thresholds)).collect();
    let used: BTreeSet<usize> = raw.iter().copied().collect();
    let dense: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let labels = used
        .iter()
        .map(|&b| {
            let lo = if b == 0 {
                "-inf".to_string()
            } else {
                thresholds[b - 1].to_string()
            };
            let hi = if b == thresholds.len() {
                "inf".to_string()
            } else {
                thresholds[b].to_string()
            };
            format!("({lo},{hi}]")
        })
        .collect();
    let codes = raw.iter().map(|b| dense[b] as StateIndex).collect();
    (codes, labels, thresholds)
}

/// Parameters for sampling a dataset from a random Bayesian network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_variables: usize,
    pub max_parents: usize,
    /// State count of every variable.
    pub states: usize,
    pub edge_probability: f64,
    pub seed: u64,
    pub num_rows: usize,
    /// Symmetric Dirichlet concentration for CPT rows; small values give
    /// near-deterministic conditionals.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
}

fn default_concentration() -> f64 {
    0.5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_variables: 5,
            max_parents: 2,
            states: 3,
            edge_probability: 0.5,
            seed: 0,
            num_rows: 10_000,
            concentration: default_concentration(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.num_variables == 0 {
            return bad("num_variables must be positive");
        }
        if self.states < 2 || self.states > StateIndex::MAX as usize {
            return bad("states must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return bad("edge_probability must lie in [0, 1]");
        }
        if self.num_rows == 0 {
            return bad("num_rows must be positive");
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be positive and finite");
        }
        Ok(())
    }
}

/// The network a synthetic dataset was sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub parents: Vec<VarSet>,
    /// Topological order used for ancestral sampling.
    pub order: Vec<usize>,
    /// `cpts[n][config]` is the distribution of `n` given the parent
    /// configuration `config` (mixed radix, ascending parent index, the
    /// smallest parent varying slowest).
    pub cpts: Vec<Vec<Vec<f64>>>,
}

impl GroundTruth {
    pub fn is_acyclic(&self) -> bool {
        graph::is_acyclic(&self.parents)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let n = spec.num_variables;
    let k = spec.states;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut parents = vec![VarSet::new(); n];
    for i in 0..n {
        let mut earlier = order[..i].to_vec();
        earlier.shuffle(&mut rng);
        for p in earlier {
            if parents[order[i]].len() >= spec.max_parents {
                break;
            }
            if rng.random::<f64>() < spec.edge_probability {
                parents[order[i]].insert(p);
            }
        }
    }

    let gamma = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    let cpts: Vec<Vec<Vec<f64>>> = parents
        .iter()
        .map(|pa| {
            let configs = k.pow(pa.len() as u32);
            (0..configs)
                .map(|_| {
                    let mut row: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
                    let total: f64 = row.iter().sum();
                    if total > 0.0 && total.is_finite() {
                        row.iter_mut().for_each(|p| *p /= total);
                    } else {
                        row.iter_mut().for_each(|p| *p = 1.0 / k as f64);
                    }
                    row
                })
                .collect()
        })
        .collect();

    let mut cells = vec![0 as StateIndex; spec.num_rows * n];
    for r in 0..spec.num_rows {
        let row = &mut cells[r * n..(r + 1) * n];
        for &v in &order {
            let config = parents[v]
                .iter()
                .fold(0usize, |acc, p| acc * k + row[p] as usize);
            let dist = &cpts[v][config];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut state = k - 1;
            for (s, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    state = s;
                    break;
                }
            }
            row[v] = state as StateIndex;
        }
    }
    let names = (0..n).map(|i| format!("X{i}")).collect();
    let dataset = Dataset::new(names, vec![k; n], cells)?;
    Ok((
        dataset,
        GroundTruth {
            parents,
            order,
            cpts,
        },
    ))
}
