//! End-to-end runs: configuration, stage chaining and the run directory.

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, ColumnReport, Dataset, DiscretizeConfig, GroundTruth, SyntheticSpec};
use crate::encoder::{encode_basic, encode_split, Encoding, WeightSpec, DEFAULT_MARGIN};
use crate::metrics::{compute_metrics, Metrics};
use crate::pscs::{run_pscs, CandidateList, Limits, PscsError};
use crate::solver::{
    solve_anneal, solve_exhaustive, AnnealParams, SolveResult, DEFAULT_EXHAUSTIVE_CAP,
};
use crate::split::{plan_splits, SplitPlan};
use crate::verify::{audit, AuditReport, DEFAULT_ORACLE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Pscs,
    Split,
    Encode,
    Solve,
    Audit,
    Metrics,
    Io,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Pscs => "pscs",
            Stage::Split => "split",
            Stage::Encode => "encode",
            Stage::Solve => "solve",
            Stage::Audit => "audit",
            Stage::Metrics => "metrics",
            Stage::Io => "io",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}

trait At<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> At<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Input {
    Csv {
        path: PathBuf,
        #[serde(default)]
        discretize: DiscretizeConfig,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Exhaustive when the bit count is within the cap, annealing otherwise.
    Auto,
    Exhaustive,
    Anneal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub sweeps: usize,
    pub restarts: usize,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub exhaustive_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let a = AnnealParams::default();
        Self {
            method: SolverMethod::Auto,
            sweeps: a.sweeps,
            restarts: a.restarts,
            beta_min: None,
            beta_max: None,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Input,
    /// Minimum entropy decrease per split, in nats per row.
    pub threshold: f64,
    /// Split budget `k`; 0 gives the basic encoding.
    pub split_budget: usize,
    pub margin: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub solver: SolverConfig,
    pub limits: Limits,
    pub oracle_cap: u64,
    /// Budgets reported in the metrics table.
    pub metric_budgets: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: Input::Synthetic(SyntheticSpec {
                num_variables: 4,
                num_rows: 2000,
                ..SyntheticSpec::default()
            }),
            threshold: 0.01,
            split_budget: 2,
            margin: DEFAULT_MARGIN,
            seed: 0,
            output: PathBuf::from("run"),
            solver: SolverConfig::default(),
            limits: Limits::default(),
            oracle_cap: DEFAULT_ORACLE_CAP as u64,
            metric_budgets: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return bad(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            ));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if self.oracle_cap == 0 {
            return bad("oracle_cap must be positive".into());
        }
        if let Some(s) = self.limits.max_seconds {
            if !(s > 0.0) {
                return bad("limits.max_seconds must be positive".into());
            }
        }
        if self.limits.max_omega == Some(0) {
            return bad("limits.max_omega must be positive".into());
        }
        match &self.input {
            Input::Synthetic(spec) => spec
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            Input::Csv { discretize, .. } => {
                if discretize.bins < 2 || discretize.max_states < 2 {
                    return bad(
                        "discretize.bins and discretize.max_states must be at least 2".into(),
                    );
                }
            }
        }
        self.anneal_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn anneal_params(&self) -> AnnealParams {
        AnnealParams {
            sweeps: self.solver.sweeps,
            restarts: self.solver.restarts,
            beta_min: self.solver.beta_min,
            beta_max: self.solver.beta_max,
            seed: self.seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

macro_rules! artifact {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl RunDir {
            $(pub fn $name(&self) -> PathBuf { self.root.join($file) })*
        }
        pub const ARTIFACTS: &[&str] = &[$($file),*];
    };
}

artifact! {
    manifest => "manifest.json",
    config => "config.toml",
    dataset => "dataset.json",
    columns => "columns.json",
    truth => "truth.json",
    candidates => "candidates.json",
    plan => "plan.json",
    encoding => "encoding.json",
    qubo_json => "qubo.json",
    qubo_text => "qubo.txt",
    solve => "solve.json",
    audit_json => "audit.json",
    audit_text => "audit.txt",
    metrics_csv => "metrics.csv",
    metrics_json => "metrics.json",
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn write_json<T: Serialize + ?Sized>(
        &self,
        path: &Path,
        value: &T,
    ) -> Result<(), PipelineError> {
        let f = fs::File::create(path).map_err(|e| io_error(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), value).at(Stage::Io)
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::new(Stage::Io, format!("{}: {e}", path.display())))
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<(), PipelineError> {
        fs::write(path, text).map_err(|e| io_error(path, e))
    }

    /// Records which artifacts are present. Contains no timestamps so that
    /// identical runs produce identical manifests.
    pub fn write_manifest(&self, extra: serde_json::Value) -> Result<Manifest, PipelineError> {
        let files = ARTIFACTS
            .iter()
            .filter(|f| **f != "manifest.json" && self.root.join(f).exists())
            .map(|f| f.to_string())
            .collect();
        let m = Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            files,
            summary: extra,
        };
        self.write_json(&self.manifest(), &m)?;
        Ok(m)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::new(Stage::Io, format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

/// Loads or generates the dataset.
pub fn load_input(
    input: &Input,
) -> Result<(Dataset, Option<GroundTruth>, Option<Vec<ColumnReport>>), PipelineError> {
    match input {
        Input::Csv { path, discretize } => {
            let ing = dataset::ingest_csv(path, discretize).at(Stage::Ingest)?;
            Ok((ing.dataset, None, Some(ing.columns)))
        }
        Input::Synthetic(spec) => {
            let (d, t) = dataset::generate_synthetic(spec).at(Stage::Ingest)?;
            Ok((d, Some(t), None))
        }
    }
}

/// Runs selection for every variable. A resource cap leaves that
/// variable's list partial instead of failing, so the lists can still be
/// saved; encoding refuses partial lists.
pub fn select_candidates(
    data: &Dataset,
    threshold: f64,
    limits: Limits,
) -> Result<Vec<CandidateList>, PipelineError> {
    (0..data.num_variables())
        .into_par_iter()
        .map(|n| match run_pscs(data, n, threshold, limits) {
            Ok(l) => Ok(l),
            Err(PscsError::CapExceeded { partial, .. }) => Ok(*partial),
            Err(e) => Err(PipelineError::new(Stage::Pscs, e)),
        })
        .collect()
}

pub fn encode(
    lists: &[CandidateList],
    plan: &SplitPlan,
    margin: f64,
) -> Result<Encoding, PipelineError> {
    let spec = WeightSpec::Auto { margin };
    if plan.budget == Some(0) {
        encode_basic(lists, spec).at(Stage::Encode)
    } else {
        encode_split(lists, plan, spec).at(Stage::Encode)
    }
}

pub fn solve(
    enc: &Encoding,
    solver: &SolverConfig,
    params: &AnnealParams,
) -> Result<SolveResult, PipelineError> {
    let exhaustive = match solver.method {
        SolverMethod::Exhaustive => true,
        SolverMethod::Anneal => false,
        SolverMethod::Auto => enc.num_bits() <= solver.exhaustive_cap,
    };
    if exhaustive {
        solve_exhaustive(&enc.qubo, solver.exhaustive_cap).at(Stage::Solve)
    } else {
        solve_anneal(&enc.qubo, params).at(Stage::Solve)
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
    pub lists: Vec<CandidateList>,
    pub plan: SplitPlan,
    pub encoding: Encoding,
    pub result: SolveResult,
    pub report: AuditReport,
    pub metrics: Metrics,
}

/// Runs every stage in memory.
pub fn run(cfg: &PipelineConfig) -> Result<Outcome, PipelineError> {
    run_with(cfg, |_| Ok(()))
}

/// Runs every stage and persists all artifacts under `cfg.output`.
pub fn run_to_dir(cfg: &PipelineConfig) -> Result<Outcome, PipelineError> {
    let dir = RunDir::create(&cfg.output).map_err(|e| io_error(&cfg.output, e))?;
    dir.write_text(&dir.config(), &cfg.to_toml().at(Stage::Config)?)?;
    let outcome = run_with(cfg, |step| step.persist(&dir))?;
    dir.write_manifest(summary(&outcome))?;
    Ok(outcome)
}

/// Short description of a finished run, stored in the manifest.
pub fn summary(o: &Outcome) -> serde_json::Value {
    serde_json::json!({
        "num_variables": o.dataset.num_variables(),
        "num_rows": o.dataset.num_rows(),
        "num_bits": o.encoding.num_bits(),
        "energy": o.result.energy,
        "score": o.report.solution.total_score,
        "edges": o.report.solution.edges,
        "verdict": o.report.verdict,
    })
}

/// A completed stage, handed to the persistence callback.
pub enum Step<'a> {
    Data {
        dataset: &'a Dataset,
        truth: Option<&'a GroundTruth>,
        columns: Option<&'a [ColumnReport]>,
    },
    Candidates(&'a [CandidateList]),
    Plan(&'a SplitPlan),
    Encoded(&'a Encoding),
    Solved(&'a SolveResult),
    Audited(&'a AuditReport),
    Measured(&'a Metrics),
}

impl Step<'_> {
    pub fn persist(&self, dir: &RunDir) -> Result<(), PipelineError> {
        match self {
            Step::Data {
                dataset,
                truth,
                columns,
            } => {
                dir.write_json(&dir.dataset(), dataset)?;
                if let Some(t) = truth {
                    dir.write_json(&dir.truth(), t)?;
                }
                if let Some(c) = columns {
                    dir.write_json(&dir.columns(), c)?;
                }
            }
            Step::Candidates(lists) => dir.write_json(&dir.candidates(), lists)?,
            Step::Plan(plan) => dir.write_json(&dir.plan(), plan)?,
            Step::Encoded(enc) => {
                dir.write_json(&dir.encoding(), enc)?;
                dir.write_json(&dir.qubo_json(), &enc.qubo)?;
                dir.write_text(&dir.qubo_text(), &enc.qubo.to_text())?;
            }
            Step::Solved(r) => dir.write_json(&dir.solve(), r)?,
            Step::Audited(a) => {
                dir.write_json(&dir.audit_json(), a)?;
                dir.write_text(&dir.audit_text(), &a.to_text())?;
            }
            Step::Measured(m) => {
                let path = dir.metrics_csv();
                let f = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
                m.write_csv(f).at(Stage::Metrics)?;
                dir.write_json(&dir.metrics_json(), m)?;
            }
        }
        Ok(())
    }
}

fn run_with(
    cfg: &PipelineConfig,
    mut on_step: impl FnMut(Step<'_>) -> Result<(), PipelineError>,
) -> Result<Outcome, PipelineError> {
    cfg.validate().at(Stage::Config)?;
    let (dataset, truth, columns) = load_input(&cfg.input)?;
    on_step(Step::Data {
        dataset: &dataset,
        truth: truth.as_ref(),
        columns: columns.as_deref(),
    })?;

    let lists = select_candidates(&dataset, cfg.threshold, cfg.limits)?;
    on_step(Step::Candidates(&lists))?;
    let metrics = compute_metrics(&lists, &cfg.metric_budgets);
    on_step(Step::Measured(&metrics))?;

    let plan = plan_splits(&lists, cfg.split_budget);
    on_step(Step::Plan(&plan))?;
    let encoding = encode(&lists, &plan, cfg.margin)?;
    on_step(Step::Encoded(&encoding))?;

    let result = solve(&encoding, &cfg.solver, &cfg.anneal_params())?;
    on_step(Step::Solved(&result))?;
    let report = audit(&encoding, &result, &lists, cfg.oracle_cap as u128).at(Stage::Audit)?;
    on_step(Step::Audited(&report))?;

    Ok(Outcome {
        dataset,
        truth,
        lists,
        plan,
        encoding,
        result,
        report,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn csv_config_with_overrides_roundtrips() {
        let cfg = PipelineConfig {
            input: Input::Csv {
                path: "data/x.csv".into(),
                discretize: DiscretizeConfig::default(),
            },
            threshold: f64::INFINITY,
            limits: Limits {
                max_omega: Some(10),
                max_seconds: Some(2.5),
            },
            solver: SolverConfig {
                method: SolverMethod::Anneal,
                beta_min: Some(0.01),
                ..Default::default()
            },
            ..Default::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = PipelineConfig::default();
        for cfg in [
            PipelineConfig {
                threshold: -1.0,
                ..base.clone()
            },
            PipelineConfig {
                margin: 0.0,
                ..base.clone()
            },
            PipelineConfig {
                oracle_cap: 0,
                ..base.clone()
            },
            PipelineConfig {
                limits: Limits {
                    max_omega: Some(0),
                    max_seconds: None,
                },
                ..base.clone()
            },
            PipelineConfig {
                solver: SolverConfig {
                    sweeps: 0,
                    ..Default::default()
                },
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(PipelineConfig::from_toml("threshold = 1.0\nbogus = 2").is_err());
    }

    #[test]
    fn stage_attribution_in_messages() {
        let cfg = PipelineConfig {
            input: Input::Csv {
                path: "/nonexistent/file.csv".into(),
                discretize: DiscretizeConfig::default(),
            },
            ..Default::default()
        };
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Ingest);
        assert!(err.to_string().starts_with("ingest stage:"));
    }
}
