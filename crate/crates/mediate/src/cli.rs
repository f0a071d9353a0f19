//! Command-line surface. Every flag can also be set through an `APP_*`
//! environment variable.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mediate_core::discovery::{pc_cpdag, PcOptions, DEFAULT_ALPHA};
use mediate_core::effects_qr::McConfig;
use mediate_core::graph::{enumerate_mec, mediator_subgraph, MEC_CAP};
use mediate_core::sim::Scenario;
use mediate_core::Method;
use serde_json::json;

use crate::estimate::{estimate, mediator_cpdag, EffectRow, EstimateConfig, GraphSource, EFFECT_COLUMNS};
use crate::io::{fmt_f64, load_csv, roles_from_header, write_adjacency, Loaded, Roles};
use crate::parallel::with_threads;
use crate::replicate::{figure1, simulate, table1, write_figure1, write_table1, Cell, ReplicateConfig, ReplicateGraph, SimulateConfig};

pub const EFFECTS_SCHEMA: &str = "mediate-effects/1";
pub const CPDAG_SCHEMA: &str = "mediate-cpdag/1";

#[derive(Debug, Parser)]
#[command(name = "mediate", version, about = "Interventional mediation effects on causal graphs")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "APP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the CPDAG of the data with PC.
    Discover(DiscoverArgs),
    /// Estimate exposure-level and per-mediator effects.
    Estimate(EstimateArgs),
    /// Write simulated datasets and their truth manifest.
    Simulate(SimulateArgs),
    /// Run the misspecification experiments.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, env = "APP_INPUT")]
    pub input: PathBuf,
    /// Comma-separated confounder columns.
    #[arg(long, value_delimiter = ',', env = "APP_CONFOUNDERS")]
    pub confounders: Vec<String>,
    #[arg(long, env = "APP_EXPOSURE")]
    pub exposure: Option<String>,
    /// Comma-separated mediator columns.
    #[arg(long, value_delimiter = ',', env = "APP_MEDIATORS")]
    pub mediators: Vec<String>,
    #[arg(long, env = "APP_OUTCOME")]
    pub outcome: Option<String>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output file (stdout when absent).
    #[arg(long, env = "APP_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv", env = "APP_FORMAT")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Significance level of the conditional independence tests.
    #[arg(long, default_value_t = DEFAULT_ALPHA, env = "APP_ALPHA")]
    pub alpha: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// ols, qr, qr-fast, m0, m1, m2 or m3.
    #[arg(long, default_value = "qr", env = "APP_METHOD")]
    pub method: String,
    /// Interval level is 1 - alpha.
    #[arg(long, default_value_t = 0.05, env = "APP_ALPHA")]
    pub alpha: f64,
    /// Monte Carlo draws per integral when a mean is not linear.
    #[arg(long, default_value_t = 100, env = "APP_MC_N")]
    pub mc_n: usize,
    /// Symmetric-t bootstrap replicates, 0 for Wald intervals
    /// (default: 200 for ols, 0 otherwise).
    #[arg(long, env = "APP_BOOTSTRAP_B")]
    pub bootstrap_b: Option<usize>,
    /// Required whenever Monte Carlo or the bootstrap is used.
    #[arg(long, env = "APP_SEED")]
    pub seed: Option<u64>,
    /// Adjacency CSV of the CPDAG (all columns or mediators only); learned with PC when absent.
    #[arg(long, env = "APP_GRAPH")]
    pub graph: Option<PathBuf>,
    /// PC significance level when the graph is learned.
    #[arg(long, default_value_t = DEFAULT_ALPHA, env = "APP_PC_ALPHA")]
    pub pc_alpha: f64,
    /// Drop score corrections larger than ln n (default: on, except for qr-fast).
    #[arg(long, action = clap::ArgAction::Set, env = "APP_TRUNCATE")]
    pub truncate: Option<bool>,
    /// Monte Carlo integration even for linear outcome means.
    #[arg(long, env = "APP_FORCE_MC")]
    pub force_mc: bool,
    /// Re-learn the graph inside every bootstrap replicate.
    #[arg(long, env = "APP_BOOTSTRAP_RELEARN")]
    pub bootstrap_relearn: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "APP_SCENARIO")]
    pub scenario: String,
    #[arg(long, default_value_t = 1000, env = "APP_N")]
    pub n: usize,
    #[arg(long, default_value_t = 3, env = "APP_P")]
    pub p: usize,
    #[arg(long, default_value_t = 3, env = "APP_T")]
    pub t: usize,
    #[arg(long, default_value_t = 1, env = "APP_REPS")]
    pub reps: usize,
    #[arg(long, env = "APP_SEED")]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "APP_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Focus mediator under the five single-mediator scenarios.
    Table1,
    /// Every mediator under the continuous and discrete all-mediator scenarios.
    Figure1,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 1000, env = "APP_N")]
    pub n: usize,
    #[arg(long, default_value_t = 100, env = "APP_REPS")]
    pub reps: usize,
    #[arg(long, default_value_t = 3, env = "APP_P")]
    pub p: usize,
    #[arg(long, default_value_t = 3, env = "APP_T")]
    pub t: usize,
    #[arg(long, env = "APP_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05, env = "APP_ALPHA")]
    pub alpha: f64,
    #[arg(long, default_value_t = 100, env = "APP_MC_N")]
    pub mc_n: usize,
    /// PC significance level on each replicate.
    #[arg(long, default_value_t = DEFAULT_ALPHA, env = "APP_PC_ALPHA")]
    pub pc_alpha: f64,
    /// Truncate the corrections of the general path at ln n.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, env = "APP_TRUNCATE")]
    pub truncate: bool,
    /// Use the true equivalence class instead of learning it.
    #[arg(long, env = "APP_TRUE_GRAPH")]
    pub true_graph: bool,
    /// Output directory.
    #[arg(long, env = "APP_OUT")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv", env = "APP_FORMAT")]
    pub format: Format,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or configuration (exit 2).
    Input(anyhow::Error),
    /// Estimation failed (exit 1).
    Estimation(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Estimation(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Estimation(e) => e,
        }
    }
}

type Outcome = Result<(), Failure>;

fn input<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Input)
}

fn estimation<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Estimation)
}

fn check_alpha(name: &str, a: f64) -> Result<(), Failure> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Failure::Input(anyhow!("--{name} must lie in (0, 1), got {a}")))
    }
}

fn load(data: &DataArgs) -> Result<Loaded, Failure> {
    let roles = if data.exposure.is_none() && data.outcome.is_none() && data.mediators.is_empty() {
        input(roles_from_header(&data.input))?
    } else {
        Roles {
            confounders: data.confounders.clone(),
            exposure: data.exposure.clone().unwrap_or_default(),
            mediators: data.mediators.clone(),
            outcome: data.outcome.clone().unwrap_or_default(),
        }
    };
    let loaded = input(load_csv(&data.input, &roles))?;
    if loaded.dropped > 0 {
        eprintln!("dropped {} rows with missing values", loaded.dropped);
    }
    Ok(loaded)
}

fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn run_discover(a: &DiscoverArgs) -> Outcome {
    check_alpha("alpha", a.alpha)?;
    let ds = load(&a.data)?.dataset;
    let full = pc_cpdag(&ds.to_matrix(), PcOptions { alpha: a.alpha, spearman: false })
        .map_err(|e| Failure::Estimation(e.into()))?;
    let med = mediator_subgraph(&full, ds.t(), ds.p()).map_err(|e| Failure::Estimation(e.into()))?;
    let mec = enumerate_mec(&med, MEC_CAP).map(|m| m.len());
    let nodes = ds.names().node_order();
    let mut w = input(sink(&a.out.out))?;
    let res: anyhow::Result<()> = (|| {
        match a.out.format {
            Format::Csv => {
                writeln!(w, "# {CPDAG_SCHEMA}")?;
                writeln!(w, "# nodes: {}", nodes.join(","))?;
                match &mec {
                    Ok(k) => writeln!(w, "# mediator_mec_size: {k}")?,
                    Err(e) => writeln!(w, "# mediator_mec_size: unavailable ({e})")?,
                }
                write_adjacency(full.as_pdag(), &mut w)?;
            }
            Format::Json => {
                let v = json!({
                    "schema": CPDAG_SCHEMA,
                    "nodes": nodes,
                    "cpdag": full.rows(),
                    "mediator_cpdag": med.rows(),
                    "mediator_mec_size": mec.as_ref().ok(),
                });
                writeln!(w, "{}", serde_json::to_string_pretty(&v)?)?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    input(res)
}

fn effect_record(r: &EffectRow) -> Vec<String> {
    vec![
        r.estimand.clone(),
        r.j.map(|j| j.to_string()).unwrap_or_default(),
        r.mediator.clone(),
        r.method.clone(),
        fmt_f64(r.point),
        fmt_f64(r.se),
        fmt_f64(r.ci_low),
        fmt_f64(r.ci_high),
        fmt_f64(r.mc_se),
        r.truncation_count.to_string(),
        r.mec_size.to_string(),
        r.bootstrap_reps.to_string(),
        r.status.clone(),
    ]
}

/// Writes the effect table with its schema line.
pub fn write_effects<W: Write>(rows: &[EffectRow], format: Format, mut w: W) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            writeln!(w, "# {EFFECTS_SCHEMA}")?;
            let mut wr = csv::Writer::from_writer(&mut w);
            wr.write_record(EFFECT_COLUMNS)?;
            for r in rows {
                wr.write_record(effect_record(r))?;
            }
            wr.flush()?;
        }
        Format::Json => {
            let v = json!({ "schema": EFFECTS_SCHEMA, "rows": rows });
            writeln!(w, "{}", serde_json::to_string_pretty(&v)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_estimate(a: &EstimateArgs) -> Outcome {
    check_alpha("alpha", a.alpha)?;
    check_alpha("pc-alpha", a.pc_alpha)?;
    let method = Method::parse(&a.method).map_err(|e| Failure::Input(e.into()))?;
    let bootstrap_b = a.bootstrap_b.unwrap_or(if method == Method::Ols { 200 } else { 0 });
    if bootstrap_b > 0 && bootstrap_b < 50 {
        return Err(Failure::Input(anyhow!("--bootstrap-b must be 0 or at least 50")));
    }
    if a.mc_n == 0 {
        return Err(Failure::Input(anyhow!("--mc-n must be positive")));
    }
    let stochastic = bootstrap_b > 0 || !matches!(method, Method::Ols | Method::QrFast);
    let seed = match (a.seed, stochastic) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => {
            return Err(Failure::Input(anyhow!(
                "--seed is required for method {} with {bootstrap_b} bootstrap replicates",
                method.as_str()
            )))
        }
    };
    let ds = load(&a.data)?.dataset;
    let graph = match &a.graph {
        Some(p) => GraphSource::File(p.clone()),
        None => GraphSource::Learn { alpha: a.pc_alpha },
    };
    let cpdag = match &graph {
        GraphSource::File(_) => input(mediator_cpdag(&ds, &graph))?,
        GraphSource::Learn { .. } => estimation(mediator_cpdag(&ds, &graph))?,
    };
    let cfg = EstimateConfig {
        method,
        alpha: a.alpha,
        mc: McConfig { n: a.mc_n, seed },
        force_mc: a.force_mc,
        truncate: a.truncate.unwrap_or(method != Method::QrFast),
        bootstrap_b,
        relearn: a.bootstrap_relearn,
        graph,
        seed,
    };
    let rows = estimation(estimate(&ds, &cpdag, &cfg))?;
    let w = input(sink(&a.out.out))?;
    input(write_effects(&rows, a.out.format, w))?;
    if rows.iter().all(|r| r.status.starts_with("error")) {
        return Err(Failure::Estimation(anyhow!("every estimate failed")));
    }
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Outcome {
    let scenario = Scenario::parse(&a.scenario).map_err(|e| Failure::Input(e.into()))?;
    if a.n == 0 || a.p == 0 || a.t == 0 {
        return Err(Failure::Input(anyhow!("--n, --p and --t must be positive")));
    }
    let cfg = SimulateConfig {
        scenario,
        n: a.n,
        p: a.p,
        t: a.t,
        reps: a.reps,
        seed: a.seed,
    };
    estimation(simulate(&cfg, &a.out))
}

fn cells_json(cells: &[Cell], schema: &str) -> serde_json::Value {
    let rows: Vec<_> = cells
        .iter()
        .map(|c| {
            json!({
                "scenario": c.scenario.as_str(),
                "mediator": c.mediator,
                "estimand": c.estimand,
                "method": c.method.as_str(),
                "mean": c.mean,
                "se": c.se,
                "truth": c.truth,
                "bias": c.bias(),
                "mc_se": c.mc_se(),
                "reps": c.reps,
            })
        })
        .collect();
    json!({ "schema": schema, "rows": rows })
}

fn write_cells(cells: &[Cell], dir: &Path, stem: &str, format: Format, table: bool) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            let f = BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?);
            if table {
                write_table1(cells, f)
            } else {
                write_figure1(cells, f)
            }
        }
        Format::Json => {
            let schema = if table { "mediate-table1/1" } else { "mediate-figure1/1" };
            let mut s = serde_json::to_string_pretty(&cells_json(cells, schema))?;
            s.push('\n');
            std::fs::write(dir.join(format!("{stem}.json")), s)?;
            Ok(())
        }
    }
}

fn run_replicate(a: &ReplicateArgs) -> Outcome {
    check_alpha("alpha", a.alpha)?;
    check_alpha("pc-alpha", a.pc_alpha)?;
    if a.n == 0 || a.reps < 2 || a.p == 0 || a.t == 0 || a.mc_n == 0 {
        return Err(Failure::Input(anyhow!("--n, --p, --t and --mc-n must be positive and --reps at least 2")));
    }
    let cfg = ReplicateConfig {
        n: a.n,
        reps: a.reps,
        p: a.p,
        t: a.t,
        seed: a.seed,
        alpha: a.alpha,
        graph: if a.true_graph {
            ReplicateGraph::Truth
        } else {
            ReplicateGraph::Learn { alpha: a.pc_alpha }
        },
        mc_n: a.mc_n,
        truncate: a.truncate,
    };
    input(std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())))?;
    match a.experiment {
        Experiment::Table1 => {
            let cells = estimation(table1(&cfg))?;
            input(write_cells(&cells, &a.out, "table1", a.format, true))
        }
        Experiment::Figure1 => {
            for (s, stem) in [(Scenario::ContinuousAll, "figure1_continuous"), (Scenario::DiscreteAll, "figure1_discrete")] {
                let cells = estimation(figure1(&cfg, s))?;
                input(write_cells(&cells, &a.out, stem, a.format, false))?;
            }
            Ok(())
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Outcome {
    let res = with_threads(cli.threads, || match &cli.command {
        Command::Discover(a) => run_discover(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Replicate(a) => run_replicate(a),
    });
    match res {
        Ok(r) => r,
        Err(e) => Err(Failure::Input(e)),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.code()
        }
    }
}
