use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bnqubo::dataset::{self, Dataset, DiscretizeConfig, SyntheticSpec};
use bnqubo::encoder::{Encoding, DEFAULT_MARGIN};
use bnqubo::metrics::compute_metrics;
use bnqubo::pipeline::{self, PipelineConfig, RunDir, SolverConfig, SolverMethod, Step};
use bnqubo::pscs::{CandidateList, Limits};
use bnqubo::solver::{AnnealParams, SolveResult, DEFAULT_EXHAUSTIVE_CAP};
use bnqubo::split::{plan_splits, SplitPlan};
use bnqubo::verify::{audit, DEFAULT_ORACLE_CAP};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Bayesian network structure learning compiled to QUBO.
#[derive(Parser)]
#[command(name = "bnqubo", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize a CSV file into a run directory.
    Ingest {
        /// Input CSV with a header row.
        csv: PathBuf,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Quantile bins for continuous columns.
        #[arg(long, default_value_t = 3)]
        bins: usize,
        /// Categorical columns with more distinct values are dropped.
        #[arg(long, default_value_t = 4)]
        max_states: usize,
    },
    /// Sample a dataset from a random network into a run directory.
    Synth {
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Number of variables.
        #[arg(long, default_value_t = 5)]
        vars: usize,
        /// States per variable.
        #[arg(long, default_value_t = 3)]
        states: usize,
        /// Rows to sample.
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        /// In-degree bound of the true network.
        #[arg(long, default_value_t = 2)]
        max_parents: usize,
        /// Probability of each allowed edge.
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        /// Dirichlet concentration of the conditional tables.
        #[arg(long, default_value_t = 0.5)]
        concentration: f64,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Select parent set candidates for every variable.
    Pscs {
        #[command(flatten)]
        run: RunArg,
        /// Minimum entropy decrease per split, in nats per row.
        #[arg(long)]
        threshold: f64,
        /// Stop after this many records per variable.
        #[arg(long)]
        max_omega: Option<usize>,
        /// Stop each variable after this much training time.
        #[arg(long)]
        max_seconds: Option<f64>,
    },
    /// Choose direct-product splits under a size budget.
    Split {
        #[command(flatten)]
        run: RunArg,
        /// Largest set of variables split out of each family.
        #[arg(short, long, default_value_t = 2)]
        k: usize,
    },
    /// Build the QUBO from candidates and the split plan.
    Encode {
        #[command(flatten)]
        run: RunArg,
        /// Relative margin added to the penalty weight bounds.
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        /// Ignore the split plan and use one group per variable.
        #[arg(long)]
        basic: bool,
    },
    /// Minimize the QUBO.
    Solve {
        #[command(flatten)]
        run: RunArg,
        /// `auto` enumerates up to the cap and anneals above it.
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// Annealing sweeps per restart.
        #[arg(long)]
        sweeps: Option<usize>,
        /// Independent annealing restarts.
        #[arg(long)]
        restarts: Option<usize>,
        /// Initial inverse temperature (default: from the coefficients).
        #[arg(long)]
        beta_min: Option<f64>,
        /// Final inverse temperature (default: from the coefficients).
        #[arg(long)]
        beta_max: Option<f64>,
        /// Random seed for annealing.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest bit count solved exhaustively.
        #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_CAP)]
        cap: usize,
    },
    /// Decode and check the solution; exits 1 when a check fails.
    Audit {
        #[command(flatten)]
        run: RunArg,
        /// Skip the oracle comparison above this many combinations.
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP as u64)]
        oracle_cap: u64,
    },
    /// Write per-variable selection and bit-count metrics.
    Metrics {
        #[command(flatten)]
        run: RunArg,
        /// Split budgets to report, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        budgets: Vec<usize>,
    },
    /// Run every stage from a config file; exits 1 when the audit fails.
    Pipeline {
        /// TOML config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the output run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the entropy threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Override the split budget.
        #[arg(short, long)]
        k: Option<usize>,
        /// Print the effective config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Args)]
struct RunArg {
    /// Run directory holding earlier stage outputs.
    #[arg(long = "run")]
    dir: PathBuf,
}

impl RunArg {
    fn open(&self) -> Result<RunDir> {
        if !self.dir.is_dir() {
            bail!("run directory {} does not exist", self.dir.display());
        }
        Ok(RunDir::open(&self.dir))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Exhaustive,
    Anneal,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_dataset(dir: &RunDir) -> Result<Dataset> {
    Dataset::load_json(&dir.dataset()).with_context(|| "run `ingest` or `synth` first")
}

fn load_lists(dir: &RunDir) -> Result<Vec<CandidateList>> {
    dir.read_json(&dir.candidates()).context("run `pscs` first")
}

fn candidates_summary(lists: &[CandidateList]) -> String {
    let mut out = String::new();
    for l in lists {
        let family: Vec<String> = l.family.iter().map(|m| m.set.to_string()).collect();
        out += &format!(
            "X{}: omega {}, lambda {}{} [{}]\n",
            l.target,
            l.omega(),
            l.lambda(),
            if l.complete { "" } else { " (partial)" },
            family.join(" ")
        );
    }
    out
}

fn manifest(dir: &RunDir, command: &str) -> Result<()> {
    dir.write_manifest(json!({ "last_command": command }))?;
    Ok(())
}

/// Returns the verdict for commands that have one, `true` otherwise.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Ingest {
            csv,
            out,
            bins,
            max_states,
        } => {
            let cfg = DiscretizeConfig {
                bins,
                max_states,
                ..Default::default()
            };
            let ing = dataset::ingest_csv(&csv, &cfg)?;
            let dir = RunDir::create(&out)?;
            Step::Data {
                dataset: &ing.dataset,
                truth: None,
                columns: Some(&ing.columns),
            }
            .persist(&dir)?;
            manifest(&dir, "ingest")?;
            println!(
                "{} variables, {} rows ({} rows with missing values dropped)",
                ing.dataset.num_variables(),
                ing.dataset.num_rows(),
                ing.dropped_rows
            );
            for c in &ing.columns {
                println!("  {}: {:?}", c.name, c.fate);
            }
        }
        Command::Synth {
            out,
            vars,
            states,
            rows,
            max_parents,
            edge_prob,
            concentration,
            seed,
        } => {
            let spec = SyntheticSpec {
                num_variables: vars,
                max_parents,
                states,
                edge_probability: edge_prob,
                seed,
                num_rows: rows,
                concentration,
            };
            let (d, truth) = dataset::generate_synthetic(&spec)?;
            let dir = RunDir::create(&out)?;
            Step::Data {
                dataset: &d,
                truth: Some(&truth),
                columns: None,
            }
            .persist(&dir)?;
            manifest(&dir, "synth")?;
            println!(
                "{} variables, {} rows, edges {:?}",
                vars,
                rows,
                bnqubo::graph::edges(&truth.parents)
            );
        }
        Command::Pscs {
            run,
            threshold,
            max_omega,
            max_seconds,
        } => {
            let dir = run.open()?;
            let d = load_dataset(&dir)?;
            if threshold.is_nan() || threshold < 0.0 {
                bail!("threshold must be non-negative");
            }
            let lists = pipeline::select_candidates(
                &d,
                threshold,
                Limits {
                    max_omega,
                    max_seconds,
                },
            )?;
            dir.write_json(&dir.candidates(), &lists)?;
            manifest(&dir, "pscs")?;
            print!("{}", candidates_summary(&lists));
            if lists.iter().any(|l| !l.complete) {
                eprintln!(
                    "warning: resource caps left some lists partial; encoding will refuse them"
                );
            }
        }
        Command::Split { run, k } => {
            let dir = run.open()?;
            let lists = load_lists(&dir)?;
            let plan = plan_splits(&lists, k);
            dir.write_json(&dir.plan(), &plan)?;
            manifest(&dir, "split")?;
            for v in &plan.variables {
                println!(
                    "X{}: Z = {}, {} + {} members, {} bits",
                    v.target,
                    v.z,
                    v.lambda1(),
                    v.lambda2(),
                    v.bits()
                );
            }
            println!("total bits {}", plan.total_bits());
        }
        Command::Encode { run, margin, basic } => {
            let dir = run.open()?;
            let lists = load_lists(&dir)?;
            let plan: SplitPlan = if basic || !dir.plan().exists() {
                bnqubo::split::plan_unsplit(&lists)
            } else {
                dir.read_json(&dir.plan())?
            };
            let enc = pipeline::encode(&lists, &plan, margin)?;
            Step::Encoded(&enc).persist(&dir)?;
            manifest(&dir, "encode")?;
            println!(
                "{:?} encoding: {} bits ({} score, {} order), {} terms, delta {}",
                enc.kind,
                enc.num_bits(),
                enc.score_bits(),
                enc.num_bits() - enc.score_bits(),
                enc.qubo.num_terms(),
                enc.weights.delta
            );
        }
        Command::Solve {
            run,
            method,
            sweeps,
            restarts,
            beta_min,
            beta_max,
            seed,
            cap,
        } => {
            let dir = run.open()?;
            let enc: Encoding = dir
                .read_json(&dir.encoding())
                .context("run `encode` first")?;
            let defaults = AnnealParams::default();
            let solver = SolverConfig {
                method: match method {
                    MethodArg::Auto => SolverMethod::Auto,
                    MethodArg::Exhaustive => SolverMethod::Exhaustive,
                    MethodArg::Anneal => SolverMethod::Anneal,
                },
                sweeps: sweeps.unwrap_or(defaults.sweeps),
                restarts: restarts.unwrap_or(defaults.restarts),
                beta_min,
                beta_max,
                exhaustive_cap: cap,
            };
            let params = AnnealParams {
                sweeps: solver.sweeps,
                restarts: solver.restarts,
                beta_min,
                beta_max,
                seed,
            };
            let r = pipeline::solve(&enc, &solver, &params)?;
            Step::Solved(&r).persist(&dir)?;
            manifest(&dir, "solve")?;
            println!(
                "{:?}: energy {} over {} bits",
                r.method, r.energy, r.num_bits
            );
        }
        Command::Audit { run, oracle_cap } => {
            let dir = run.open()?;
            let enc: Encoding = dir
                .read_json(&dir.encoding())
                .context("run `encode` first")?;
            let lists = load_lists(&dir)?;
            let r: SolveResult = dir.read_json(&dir.solve()).context("run `solve` first")?;
            let report = audit(&enc, &r, &lists, oracle_cap as u128)?;
            Step::Audited(&report).persist(&dir)?;
            manifest(&dir, "audit")?;
            print!("{}", report.to_text());
            return Ok(report.verdict);
        }
        Command::Metrics { run, budgets } => {
            let dir = run.open()?;
            let lists = load_lists(&dir)?;
            let m = compute_metrics(&lists, &budgets);
            Step::Measured(&m).persist(&dir)?;
            manifest(&dir, "metrics")?;
            let s = &m.summary;
            println!(
                "basic {} bits; split {:?} bits for budgets {:?}; full encoding {} bits",
                s.basic_total, s.split_totals, s.budgets, s.full_encoding_bits
            );
        }
        Command::Pipeline {
            config,
            out,
            seed,
            threshold,
            k,
            print_config,
        } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(k) = k {
                cfg.split_budget = k;
            }
            cfg.validate()?;
            if print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(true);
            }
            let outcome = pipeline::run_to_dir(&cfg)?;
            print!("{}", outcome.report.to_text());
            println!("artifacts in {}", cfg.output.display());
            return Ok(outcome.report.verdict);
        }
    }
    Ok(true)
}
