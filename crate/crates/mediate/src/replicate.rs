//! Simulation drivers: replicate datasets with a truth manifest, and the
//! misspecification experiments (single focus mediator, all mediators).

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use mediate_core::discovery::{pc_cpdag, PcOptions};
use mediate_core::effects_ols::distinct_parent_sets;
use mediate_core::effects_qr::{fast_qr_over, fit_bundle_for, qr_from_pieces, strategy_from_pieces, McConfig, QrOptions, QrPieces};
use mediate_core::graph::{enumerate_mec, mediator_subgraph, MEC_CAP};
use mediate_core::nuisance::{FitOptions, Link, MediatorMode};
use mediate_core::rng::derive_seed;
use mediate_core::sim::{gen_scenario, random_truth, true_effects, Scenario, SemiLinearTruth, TrueEffects};
use mediate_core::{Dag, Dataset, Method};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::io::{fmt_f64, save_csv};

/// Strategies compared in the experiments, in output order.
pub const METHODS: [Method; 5] = [Method::Qr, Method::M0, Method::M1, Method::M2, Method::M3];

/// How the replicate estimators obtain the mediator graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplicateGraph {
    /// PC on each simulated dataset.
    Learn { alpha: f64 },
    /// The equivalence class of the true mediator DAG.
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateConfig {
    pub n: usize,
    pub reps: usize,
    pub p: usize,
    pub t: usize,
    pub seed: u64,
    pub alpha: f64,
    pub graph: ReplicateGraph,
    /// Monte Carlo draws for the discrete design.
    pub mc_n: usize,
    /// Truncate the corrections of the general (Monte Carlo) path.
    pub truncate: bool,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            n: 1000,
            reps: 100,
            p: 3,
            t: 3,
            seed: 2024,
            alpha: 0.05,
            graph: ReplicateGraph::Learn { alpha: 0.01 },
            mc_n: 100,
            truncate: true,
        }
    }
}

/// Replicate summary of one `(scenario or mediator, estimand, method)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario: Scenario,
    pub mediator: usize,
    pub estimand: &'static str,
    pub method: Method,
    pub mean: f64,
    /// Standard deviation across replicates.
    pub se: f64,
    pub truth: f64,
    /// Replicates that produced an estimate.
    pub reps: usize,
}

impl Cell {
    pub fn bias(&self) -> f64 {
        self.mean - self.truth
    }

    /// Monte Carlo standard error of `mean`.
    pub fn mc_se(&self) -> f64 {
        self.se / (self.reps as f64).sqrt()
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (m, (ss / (n - 1.0)).sqrt())
}

fn replicate_mec(ds: &Dataset, truth: &SemiLinearTruth, graph: ReplicateGraph) -> mediate_core::Result<Vec<Dag>> {
    match graph {
        ReplicateGraph::Truth => truth.mec(),
        ReplicateGraph::Learn { alpha } => {
            let full = pc_cpdag(&ds.to_matrix(), PcOptions { alpha, spearman: false })?;
            enumerate_mec(&mediator_subgraph(&full, ds.t(), ds.p())?, MEC_CAP)
        }
    }
}

/// `(DM, IM)` for every method in [`METHODS`] on mediator `j`.
type Estimates = Vec<(f64, f64)>;

fn pieces_estimates(
    ds: &Dataset,
    j: usize,
    mec: &[Dag],
    fit: FitOptions,
    opts: QrOptions,
    fast_qr: bool,
) -> mediate_core::Result<Estimates> {
    // The closed-form path never truncates.
    let bundle = fit_bundle_for(ds, fit, j, mec)?;
    let sets: Vec<Vec<usize>> = distinct_parent_sets(mec, j).into_iter().map(|s| s.0).collect();
    let pieces = QrPieces::compute(ds, &bundle, j, &sets, opts)?;
    let mut out = Vec::with_capacity(METHODS.len());
    for m in METHODS {
        if m == Method::Qr {
            if fast_qr {
                let (dm, im) = fast_qr_over(ds, j, mec, opts.alpha, false, fit.clip)?;
                out.push((dm.estimate.point, im.estimate.point));
            } else {
                let r = qr_from_pieces(&pieces, j, mec, opts.truncate, opts.alpha)?;
                out.push((r.dm.estimate.point, r.im.estimate.point));
            }
        } else {
            let (dm, im) = strategy_from_pieces(&pieces, j, mec, m, opts.alpha)?;
            out.push((dm.point, im.point));
        }
    }
    Ok(out)
}

fn collect_cells(
    scenario: Scenario,
    mediator: usize,
    truth: &TrueEffects,
    reps: &[Option<Estimates>],
    out: &mut Vec<Cell>,
) {
    for (estimand, pick) in [("DM", 0usize), ("IM", 1)] {
        for (k, m) in METHODS.iter().enumerate() {
            let vals: Vec<f64> = reps
                .iter()
                .flatten()
                .map(|e| if pick == 0 { e[k].0 } else { e[k].1 })
                .filter(|v| v.is_finite())
                .collect();
            let (mean, se) = mean_sd(&vals);
            out.push(Cell {
                scenario,
                mediator,
                estimand,
                method: *m,
                mean,
                se,
                truth: if pick == 0 { truth.dm } else { truth.im },
                reps: vals.len(),
            });
        }
    }
}

/// Base truth of the single-mediator experiment.
pub fn table1_truth(cfg: &ReplicateConfig, scenario: Scenario) -> SemiLinearTruth {
    random_truth(scenario, cfg.p, cfg.t, derive_seed(cfg.seed, 0))
}

/// Focus-mediator experiment over the five single-mediator scenarios.
/// Returns one cell per `(scenario, estimand, method)`.
pub fn table1(cfg: &ReplicateConfig) -> Result<Vec<Cell>> {
    let fit = FitOptions {
        link: Link::Probit,
        clip: 0.01,
        mediator: MediatorMode::Gaussian,
    };
    let mut cells = Vec::new();
    for (si, &scenario) in Scenario::SINGLE.iter().enumerate() {
        let truth = table1_truth(cfg, scenario);
        let j = truth.focus;
        let te = true_effects(&truth, j).with_context(|| format!("true effects for {scenario}"))?;
        let base = derive_seed(cfg.seed, si as u64 + 1);
        let reps: Vec<Option<Estimates>> = (0..cfg.reps)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(base, k as u64);
                let ds = gen_scenario(&truth, scenario, cfg.n, seed).ok()?;
                let mec = replicate_mec(&ds, &truth, cfg.graph).ok()?;
                let opts = QrOptions {
                    mc: McConfig {
                        n: cfg.mc_n,
                        seed: derive_seed(seed, 1),
                    },
                    force_mc: false,
                    truncate: cfg.truncate,
                    alpha: cfg.alpha,
                };
                pieces_estimates(&ds, j, &mec, fit, opts, false).ok()
            })
            .collect();
        collect_cells(scenario, j, &te, &reps, &mut cells);
    }
    Ok(cells)
}

/// All-mediator experiment for `ContinuousAll` or `DiscreteAll`. Returns one
/// cell per `(mediator, estimand, method)`.
pub fn figure1(cfg: &ReplicateConfig, scenario: Scenario) -> Result<Vec<Cell>> {
    let discrete = scenario == Scenario::DiscreteAll;
    let fit = FitOptions {
        link: Link::Probit,
        clip: 0.01,
        mediator: if discrete {
            MediatorMode::Bernoulli(Link::Probit)
        } else {
            MediatorMode::Gaussian
        },
    };
    let tag = if discrete { 0x20 } else { 0x10 };
    let truth = random_truth(scenario, cfg.p, cfg.t, derive_seed(cfg.seed, tag));
    let truths: Vec<TrueEffects> = (0..cfg.p)
        .map(|j| true_effects(&truth, j))
        .collect::<mediate_core::Result<_>>()
        .with_context(|| format!("true effects for {scenario}"))?;
    let base = derive_seed(cfg.seed, tag + 1);
    let reps: Vec<Vec<Option<Estimates>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(base, k as u64);
            let Ok(ds) = gen_scenario(&truth, scenario, cfg.n, seed) else {
                return vec![None; cfg.p];
            };
            let Ok(mec) = replicate_mec(&ds, &truth, cfg.graph) else {
                return vec![None; cfg.p];
            };
            (0..cfg.p)
                .map(|j| {
                    let opts = QrOptions {
                        mc: McConfig {
                            n: cfg.mc_n,
                            seed: derive_seed(seed, j as u64 + 1),
                        },
                        force_mc: discrete,
                        truncate: cfg.truncate,
                        alpha: cfg.alpha,
                    };
                    pieces_estimates(&ds, j, &mec, fit, opts, !discrete).ok()
                })
                .collect()
        })
        .collect();
    let mut cells = Vec::new();
    for (j, te) in truths.iter().enumerate() {
        let per_j: Vec<Option<Estimates>> = reps.iter().map(|r| r[j].clone()).collect();
        collect_cells(scenario, j, te, &per_j, &mut cells);
    }
    Ok(cells)
}

pub const TABLE1_SCHEMA: &str = "# mediate table1 v1";
pub const FIGURE1_SCHEMA: &str = "# mediate figure1 v1";

/// Table of bias and replicate standard error per scenario.
pub fn write_table1<W: Write>(cells: &[Cell], mut w: W) -> Result<()> {
    writeln!(w, "{TABLE1_SCHEMA}")?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scenario", "mediator", "estimand", "method", "mean", "se", "truth", "bias", "mc_se", "reps"])?;
    for c in cells {
        wr.write_record([
            c.scenario.as_str().to_string(),
            c.mediator.to_string(),
            c.estimand.to_string(),
            c.method.as_str().to_string(),
            fmt_f64(c.mean),
            fmt_f64(c.se),
            fmt_f64(c.truth),
            fmt_f64(c.bias()),
            fmt_f64(c.mc_se()),
            c.reps.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Plot data: per-mediator replicate mean, standard error and truth.
pub fn write_figure1<W: Write>(cells: &[Cell], mut w: W) -> Result<()> {
    writeln!(w, "{FIGURE1_SCHEMA}")?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["mediator", "estimand", "method", "mean", "se", "truth"])?;
    for c in cells {
        wr.write_record([
            c.mediator.to_string(),
            c.estimand.to_string(),
            c.method.as_str().to_string(),
            fmt_f64(c.mean),
            fmt_f64(c.se),
            fmt_f64(c.truth),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn matrix_rows(rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> Value {
    Value::Array((0..rows).map(|i| json!((0..cols).map(|k| at(i, k)).collect::<Vec<_>>())).collect())
}

/// Coefficients and true effects of every mediator.
pub fn truth_manifest(truth: &SemiLinearTruth) -> Result<Value> {
    let effects: Vec<Value> = (0..truth.p)
        .map(|j| {
            let e = true_effects(truth, j)?;
            Ok(json!({
                "j": j,
                "dm": e.dm,
                "im": e.im,
                "tm": e.tm,
                "tm_per_dag": e.tm_per_dag,
                "im_per_dag": e.im_per_dag,
                "error_bound": e.error_bound,
            }))
        })
        .collect::<mediate_core::Result<_>>()?;
    let e0 = true_effects(truth, 0)?;
    Ok(json!({
        "schema": "mediate-truth/1",
        "scenario": truth.scenario.as_str(),
        "seed": truth.seed,
        "p": truth.p,
        "n_conf": truth.n_conf,
        "focus": truth.focus,
        "b_mm": matrix_rows(truth.p, truth.p, |i, k| truth.b_mm[(i, k)]),
        "b_mc": matrix_rows(truth.n_conf, truth.p, |i, k| truth.b_mc[(i, k)]),
        "beta_ma": truth.beta_ma,
        "beta_yc": truth.beta_yc,
        "alpha_ya": truth.alpha_ya,
        "beta_ym": truth.beta_ym,
        "beta_ac": truth.beta_ac,
        "sigma2_m": truth.sigma2_m,
        "sigma2_y": truth.sigma2_y,
        "de": e0.de,
        "ie": e0.ie,
        "te": e0.te,
        "mediators": effects,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Writes `rep_<k>.csv` for every replicate and `truth.json` into `dir`.
pub fn simulate(cfg: &SimulateConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let truth = random_truth(cfg.scenario, cfg.p, cfg.t, derive_seed(cfg.seed, 0));
    let manifest = truth_manifest(&truth)?;
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    std::fs::write(dir.join("truth.json"), body)?;
    let width = cfg.reps.saturating_sub(1).to_string().len();
    (0..cfg.reps).into_par_iter().try_for_each(|k| -> Result<()> {
        let ds = gen_scenario(&truth, cfg.scenario, cfg.n, derive_seed(cfg.seed, k as u64 + 1))?;
        save_csv(&ds, &dir.join(format!("rep_{k:0width$}.csv")))
    })
}
