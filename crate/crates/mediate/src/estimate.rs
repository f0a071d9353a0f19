//! Graph resolution and the effect table behind `mediate estimate`.

use std::path::PathBuf;

use anyhow::{bail, Result};
use mediate_core::discovery::{pc_cpdag, PcOptions};
use mediate_core::effects_ols::{ols_de_ie, ols_dm, ols_im_over, CiMode, OlsFits};
use mediate_core::effects_qr::{fast_qr_over, fit_bundle_for, qr_over, strategy_over, BootstrapConfig, McConfig, QrOptions};
use mediate_core::graph::{enumerate_mec, mediator_subgraph, Cpdag, Dag, MEC_CAP};
use mediate_core::nuisance::FitOptions;
use mediate_core::special::norm_quantile;
use mediate_core::{Dataset, Estimand, Method};
use rayon::prelude::*;
use serde::Serialize;

use crate::parallel::par_bootstrap;

/// Where the mediator CPDAG comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    /// PC on the full table at the given significance level.
    Learn { alpha: f64 },
    /// Adjacency CSV over all `t + p + 1` nodes or over the `p` mediators.
    File(PathBuf),
}

/// CPDAG over the mediators only.
pub fn mediator_cpdag(ds: &Dataset, source: &GraphSource) -> Result<Cpdag> {
    match source {
        GraphSource::Learn { alpha } => {
            let full = pc_cpdag(
                &ds.to_matrix(),
                PcOptions {
                    alpha: *alpha,
                    spearman: false,
                },
            )?;
            Ok(mediator_subgraph(&full, ds.t(), ds.p())?)
        }
        GraphSource::File(path) => {
            let rows = crate::io::load_adjacency(path)?;
            let c = Cpdag::from_rows(&rows)?;
            if c.d() == ds.p() {
                Ok(c)
            } else if c.d() == ds.d() {
                Ok(mediator_subgraph(&c, ds.t(), ds.p())?)
            } else {
                bail!(
                    "graph has {} nodes; expected {} (mediators) or {} (all columns)",
                    c.d(),
                    ds.p(),
                    ds.d()
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub method: Method,
    pub alpha: f64,
    pub mc: McConfig,
    pub force_mc: bool,
    pub truncate: bool,
    /// Bootstrap replicates; 0 keeps the Wald intervals.
    pub bootstrap_b: usize,
    /// Re-learn the graph on every bootstrap replicate.
    pub relearn: bool,
    pub graph: GraphSource,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            method: Method::Qr,
            alpha: 0.05,
            mc: McConfig::default(),
            force_mc: false,
            truncate: true,
            bootstrap_b: 0,
            relearn: false,
            graph: GraphSource::Learn { alpha: 0.01 },
            seed: 0,
        }
    }
}

/// One line of the effect table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub estimand: String,
    /// Mediator index, empty for exposure-level effects.
    pub j: Option<usize>,
    pub mediator: String,
    pub method: String,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mc_se: f64,
    pub truncation_count: usize,
    pub mec_size: usize,
    pub bootstrap_reps: usize,
    pub status: String,
}

pub const EFFECT_COLUMNS: [&str; 13] = [
    "estimand",
    "j",
    "mediator",
    "method",
    "point",
    "se",
    "ci_low",
    "ci_high",
    "mc_se",
    "truncation_count",
    "mec_size",
    "bootstrap_reps",
    "status",
];

#[derive(Debug, Clone, Copy)]
struct Est {
    estimand: Estimand,
    point: f64,
    se: f64,
    mc_se: f64,
    truncated: usize,
}

impl Est {
    fn plain(estimand: Estimand, point: f64, se: f64) -> Self {
        Est {
            estimand,
            point,
            se,
            mc_se: 0.0,
            truncated: 0,
        }
    }
}

fn qr_options(cfg: &EstimateConfig) -> QrOptions {
    QrOptions {
        mc: cfg.mc,
        force_mc: cfg.force_mc,
        truncate: cfg.truncate,
        alpha: cfg.alpha,
    }
}

/// Estimates of one unit: the exposure-level effects (`j = None`, OLS only)
/// or the effects of mediator `j`.
fn unit(ds: &Dataset, mec: &[Dag], j: Option<usize>, cfg: &EstimateConfig) -> mediate_core::Result<Vec<Est>> {
    let alpha = cfg.alpha;
    let Some(j) = j else {
        let fits = OlsFits::fit(ds)?;
        let (de, ie, te) = ols_de_ie(ds, &fits, alpha)?;
        return Ok([de, ie, te].iter().map(|e| Est::plain(e.estimand, e.point, e.se)).collect());
    };
    match cfg.method {
        Method::Ols => {
            let fits = OlsFits::fit(ds)?;
            let dm = ols_dm(ds, &fits, j, alpha)?;
            let im = ols_im_over(ds, mec, j, alpha, CiMode::Analytic)?;
            Ok(vec![
                Est::plain(Estimand::DM, dm.point, dm.se),
                Est::plain(Estimand::IM, im.estimate.point, im.estimate.se),
            ])
        }
        Method::Qr => {
            let bundle = fit_bundle_for(ds, FitOptions::default(), j, mec)?;
            let r = qr_over(ds, &bundle, j, mec, qr_options(cfg))?;
            Ok([r.dm, r.im, r.tm]
                .iter()
                .map(|q| Est {
                    estimand: q.estimate.estimand,
                    point: q.estimate.point,
                    se: q.estimate.se,
                    mc_se: q.mc_se,
                    truncated: q.truncation_count,
                })
                .collect())
        }
        Method::QrFast => {
            let (dm, im) = fast_qr_over(ds, j, mec, alpha, cfg.truncate, FitOptions::default().clip)?;
            Ok([dm, im]
                .iter()
                .map(|q| Est {
                    estimand: q.estimate.estimand,
                    point: q.estimate.point,
                    se: q.estimate.se,
                    mc_se: 0.0,
                    truncated: q.truncation_count,
                })
                .collect())
        }
        m => {
            let bundle = fit_bundle_for(ds, FitOptions::default(), j, mec)?;
            let (dm, im) = strategy_over(ds, &bundle, j, mec, m, qr_options(cfg))?;
            Ok(vec![
                Est::plain(Estimand::DM, dm.point, dm.se),
                Est::plain(Estimand::IM, im.point, im.se),
            ])
        }
    }
}

fn error_row(estimand: &str, j: Option<usize>, ds: &Dataset, method: Method, mec: usize, msg: String) -> EffectRow {
    EffectRow {
        estimand: estimand.to_string(),
        j,
        mediator: j.map(|k| ds.names().mediators[k].clone()).unwrap_or_default(),
        method: method.as_str().to_string(),
        point: f64::NAN,
        se: f64::NAN,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
        mc_se: f64::NAN,
        truncation_count: 0,
        mec_size: mec,
        bootstrap_reps: 0,
        status: format!("error: {msg}"),
    }
}

/// Effect table for `ds` given the mediator CPDAG. Failures are reported in
/// the `status` column of the affected rows.
pub fn estimate(ds: &Dataset, cpdag_m: &Cpdag, cfg: &EstimateConfig) -> Result<Vec<EffectRow>> {
    let mec = enumerate_mec(cpdag_m, MEC_CAP)?;
    let mut units: Vec<Option<usize>> = Vec::new();
    if cfg.method == Method::Ols {
        units.push(None);
    }
    units.extend((0..ds.p()).map(Some));
    let z = norm_quantile(1.0 - cfg.alpha / 2.0);

    let blocks: Vec<Vec<EffectRow>> = units
        .par_iter()
        .map(|&j| {
            let base = match unit(ds, &mec, j, cfg) {
                Ok(b) => b,
                Err(e) => {
                    let names: &[&str] = if j.is_none() { &["DE", "IE", "TE"] } else { &["DM", "IM"] };
                    return names
                        .iter()
                        .map(|n| error_row(n, j, ds, cfg.method, mec.len(), e.to_string()))
                        .collect();
                }
            };
            let mut cis: Vec<(f64, f64)> = base.iter().map(|e| (e.point - z * e.se, e.point + z * e.se)).collect();
            let mut status = "ok".to_string();
            let mut reps = 0;
            if cfg.bootstrap_b > 0 {
                let pairs: Vec<(f64, f64)> = base.iter().map(|e| (e.point, e.se)).collect();
                let est = |rep: &Dataset| -> mediate_core::Result<Vec<(f64, f64)>> {
                    let m = if cfg.relearn {
                        let c = mediator_cpdag(rep, &cfg.graph)
                            .map_err(|e| mediate_core::Error::Numerical(e.to_string()))?;
                        enumerate_mec(&c, MEC_CAP)?
                    } else {
                        mec.clone()
                    };
                    Ok(unit(rep, &m, j, cfg)?.iter().map(|e| (e.point, e.se)).collect())
                };
                let bcfg = BootstrapConfig {
                    b: cfg.bootstrap_b,
                    alpha: cfg.alpha,
                    seed: mediate_core::rng::derive_seed(cfg.seed, j.map_or(0, |k| k as u64 + 1)),
                };
                match par_bootstrap(ds, &pairs, &est, bcfg) {
                    Ok(c) => {
                        cis = c;
                        reps = cfg.bootstrap_b;
                    }
                    Err(e) => status = format!("bootstrap failed, Wald interval kept: {e}"),
                }
            }
            base.iter()
                .zip(&cis)
                .map(|(e, ci)| EffectRow {
                    estimand: e.estimand.as_str().to_string(),
                    j,
                    mediator: j.map(|k| ds.names().mediators[k].clone()).unwrap_or_default(),
                    method: cfg.method.as_str().to_string(),
                    point: e.point,
                    se: e.se,
                    ci_low: ci.0,
                    ci_high: ci.1,
                    mc_se: e.mc_se,
                    truncation_count: e.truncated,
                    mec_size: mec.len(),
                    bootstrap_reps: reps,
                    status: status.clone(),
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}
