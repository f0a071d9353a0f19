//! Least-squares effect estimators under the semi-linear model, with analytic intervals.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::dataset::{Col, Dataset};
use crate::effects_qr::{symmetric_t_bootstrap, BootstrapConfig};
use crate::error::{dim, invalid, Error, Result};
use crate::graph::{enumerate_mec, Cpdag, Dag, MEC_CAP};
use crate::linmodel::{gamma_transform, ols_fit, OlsFit};
#[allow(unused_imports)]
use crate::special::{norm_quantile, Sqrt};

/// Target of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimand {
    DE,
    IE,
    TE,
    DM,
    TM,
    IM,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::DE => "DE",
            Estimand::IE => "IE",
            Estimand::TE => "TE",
            Estimand::DM => "DM",
            Estimand::TM => "TM",
            Estimand::IM => "IM",
        }
    }
}

/// Estimation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ols,
    Qr,
    QrFast,
    M0,
    M1,
    M2,
    M3,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Qr => "qr",
            Method::QrFast => "qr-fast",
            Method::M0 => "m0",
            Method::M1 => "m1",
            Method::M2 => "m2",
            Method::M3 => "m3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ols" => Method::Ols,
            "qr" => Method::Qr,
            "qr-fast" => Method::QrFast,
            "m0" => Method::M0,
            "m1" => Method::M1,
            "m2" => Method::M2,
            "m3" => Method::M3,
            _ => return Err(invalid(alloc::format!("unknown method `{s}`"))),
        })
    }
}

/// Point estimate with standard error and a two-sided interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub mediator: Option<usize>,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub method: Method,
}

impl EffectEstimate {
    /// Wald interval `point ± z_{1-α/2} se`.
    pub fn wald(estimand: Estimand, mediator: Option<usize>, point: f64, se: f64, alpha: f64, method: Method) -> Self {
        let z = norm_quantile(1.0 - alpha / 2.0);
        EffectEstimate {
            estimand,
            mediator,
            point,
            se,
            ci_low: point - z * se,
            ci_high: point + z * se,
            alpha,
            method,
        }
    }
}

/// The two structural regressions: each mediator on (1, C, A) and Y on (1, C, A, M).
#[derive(Debug, Clone)]
pub struct OlsFits {
    pub theta_ma: DVector<f64>,
    /// `n × p` mediator residuals.
    pub mediator_residuals: DMatrix<f64>,
    pub alpha_ya: f64,
    pub beta_ym: DVector<f64>,
    pub outcome: OlsFit,
}

impl OlsFits {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let (n, p, t1) = (ds.n(), ds.p(), ds.n_conf());
        let xm = ds.design(&[Col::Conf, Col::Exposure]);
        let mut theta = DVector::zeros(p);
        let mut res = DMatrix::zeros(n, p);
        for k in 0..p {
            let f = ols_fit(&xm, &ds.mediator_dvec(k))?;
            theta[k] = f.coefficients[1 + t1];
            res.set_column(k, &f.residuals);
        }
        let xy = ds.design(&[Col::Conf, Col::Exposure, Col::Mediators]);
        let outcome = ols_fit(&xy, &ds.y_dvec())?;
        let alpha_ya = outcome.coefficients[1 + t1];
        let beta_ym = outcome.coefficients.rows(2 + t1, p).clone_owned();
        Ok(OlsFits {
            theta_ma: theta,
            mediator_residuals: res,
            alpha_ya,
            beta_ym,
            outcome,
        })
    }
}

fn exposure_col(ds: &Dataset) -> DMatrix<f64> {
    DMatrix::from_column_slice(ds.n(), 1, ds.a_vec())
}

fn mediator_block(ds: &Dataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(ds.n(), ds.p(), ds.m_raw())
}

/// Plug-in covariances of `√n(β̂_YM − β)` and `√n(θ̂_MA − θ)`.
struct Sandwich {
    sigma_beta: DMatrix<f64>,
    sigma_theta: DMatrix<f64>,
    /// `n [Γ_{A,(1,C,M)} Γᵀ] Σε̂²/n`.
    var_de: f64,
}

fn sandwich(ds: &Dataset, fits: &OlsFits) -> Result<Sandwich> {
    let a = exposure_col(ds);
    let m = mediator_block(ds);
    let sum_e2 = fits.outcome.rss();
    let g_a = gamma_transform(&a, &ds.design(&[Col::Conf, Col::Mediators]))?;
    let g_m = gamma_transform(&m, &ds.design(&[Col::Conf, Col::Exposure]))?;
    let g_ac = gamma_transform(&a, &ds.design(&[Col::Conf]))?;
    let var_de = (&g_a * g_a.transpose())[(0, 0)] * sum_e2;
    let sigma_beta = (&g_m * g_m.transpose()) * sum_e2;
    let em = &fits.mediator_residuals;
    let gac2 = (&g_ac * g_ac.transpose())[(0, 0)];
    let sigma_theta = (em.transpose() * em) * gac2;
    Ok(Sandwich {
        sigma_beta,
        sigma_theta,
        var_de,
    })
}

/// Natural direct, indirect and total effects.
pub fn ols_de_ie(ds: &Dataset, fits: &OlsFits, alpha: f64) -> Result<(EffectEstimate, EffectEstimate, EffectEstimate)> {
    let n = ds.n() as f64;
    let s = sandwich(ds, fits)?;
    let de = fits.alpha_ya;
    let se_de = (s.var_de / n).max(0.0).sqrt();
    let ie = fits.beta_ym.dot(&fits.theta_ma);
    let b = &fits.beta_ym;
    let th = &fits.theta_ma;
    let v_ie = (b.transpose() * &s.sigma_theta * b)[(0, 0)] + (th.transpose() * &s.sigma_beta * th)[(0, 0)];
    let se_ie = (v_ie.max(0.0) / n).sqrt();

    // Y on (1, C, A): its exposure coefficient equals DE + IE in-sample.
    let a = exposure_col(ds);
    let x = ds.design(&[Col::Conf, Col::Exposure]);
    let total = ols_fit(&x, &ds.y_dvec())?;
    let g = gamma_transform(&a, &ds.design(&[Col::Conf]))?;
    let se_te = ((&g * g.transpose())[(0, 0)] * total.rss() / n).max(0.0).sqrt();
    Ok((
        EffectEstimate::wald(Estimand::DE, None, de, se_de, alpha, Method::Ols),
        EffectEstimate::wald(Estimand::IE, None, ie, se_ie, alpha, Method::Ols),
        EffectEstimate::wald(Estimand::TE, None, de + ie, se_te, alpha, Method::Ols),
    ))
}

/// `DM_j = β_YM,j θ_MA,j` with a delta-method interval.
pub fn ols_dm(ds: &Dataset, fits: &OlsFits, j: usize, alpha: f64) -> Result<EffectEstimate> {
    if j >= ds.p() {
        return Err(dim("mediator index out of range"));
    }
    let s = sandwich(ds, fits)?;
    let (b, th) = (fits.beta_ym[j], fits.theta_ma[j]);
    let v = b * b * s.sigma_theta[(j, j)] + th * th * s.sigma_beta[(j, j)];
    let se = (v.max(0.0) / ds.n() as f64).sqrt();
    Ok(EffectEstimate::wald(Estimand::DM, Some(j), b * th, se, alpha, Method::Ols))
}

fn conditional_design(ds: &Dataset, j: usize, pa: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rest: Vec<Col> = pa.iter().map(|&k| Col::Mediator(k)).collect();
    rest.push(Col::Exposure);
    rest.push(Col::Conf);
    let mut cols = vec![Col::Mediator(j)];
    cols.extend(rest.iter().copied());
    (ds.design(&cols), ds.design(&rest))
}

/// Coefficient on `M_j` in the regression of Y on `(1, M_j, Pa_j, A, C)`.
pub fn reg_coef_first(ds: &Dataset, j: usize, pa: &[usize]) -> Result<f64> {
    if j >= ds.p() || pa.iter().any(|&k| k >= ds.p() || k == j) {
        return Err(dim("mediator index out of range"));
    }
    let (x, _) = conditional_design(ds, j, pa);
    Ok(ols_fit(&x, &ds.y_dvec())?.coefficients[1])
}

/// Distinct parent sets of `j` across `mec` with their multiplicities, in first-seen order.
pub fn distinct_parent_sets(mec: &[Dag], j: usize) -> Vec<(Vec<usize>, usize)> {
    let mut seen: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for g in mec {
        let pa = g.parents(j);
        let e = seen.entry(pa.clone()).or_insert(0);
        if *e == 0 {
            order.push(pa);
        }
        *e += 1;
    }
    order
        .into_iter()
        .map(|pa| {
            let m = seen[&pa];
            (pa, m)
        })
        .collect()
}

/// How intervals for the averaged indirect effect are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiMode {
    Analytic,
    Bootstrap(BootstrapConfig),
}

/// MEC-averaged `IM_j` together with the per-DAG pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ImAverage {
    pub estimate: EffectEstimate,
    pub dm: f64,
    /// `TM_j(G)` for each MEC member, in input order.
    pub tm_per_dag: Vec<f64>,
    pub im_per_dag: Vec<f64>,
}

/// `IM_j` averaged over the Markov equivalence class of the mediator CPDAG.
pub fn ols_im_avg(ds: &Dataset, cpdag_m: &Cpdag, j: usize, alpha: f64, mode: CiMode) -> Result<ImAverage> {
    let mec = enumerate_mec(cpdag_m, MEC_CAP)?;
    ols_im_over(ds, &mec, j, alpha, mode)
}

/// As [`ols_im_avg`] for an explicit list of mediator DAGs.
pub fn ols_im_over(ds: &Dataset, mec: &[Dag], j: usize, alpha: f64, mode: CiMode) -> Result<ImAverage> {
    if mec.is_empty() {
        return Err(invalid("empty equivalence class"));
    }
    if mec.iter().any(|g| g.d() != ds.p()) {
        return Err(dim("mediator graph size differs from p"));
    }
    let fits = OlsFits::fit(ds)?;
    let (point, pieces) = im_point(ds, &fits, mec, j)?;
    let se = im_analytic_se(ds, &fits, mec, j)?;
    let mut estimate = EffectEstimate::wald(Estimand::IM, Some(j), point, se, alpha, Method::Ols);
    if let CiMode::Bootstrap(cfg) = mode {
        let ci = symmetric_t_bootstrap(
            ds,
            &[(point, se)],
            |rep| {
                let f = OlsFits::fit(rep)?;
                let (pt, _) = im_point(rep, &f, mec, j)?;
                Ok(vec![(pt, im_analytic_se(rep, &f, mec, j)?)])
            },
            BootstrapConfig { alpha, ..cfg },
        )?;
        estimate.ci_low = ci[0].0;
        estimate.ci_high = ci[0].1;
    }
    let dm = fits.beta_ym[j] * fits.theta_ma[j];
    let (tm_per_dag, im_per_dag) = pieces;
    Ok(ImAverage {
        estimate,
        dm,
        tm_per_dag,
        im_per_dag,
    })
}

type PerDag = (Vec<f64>, Vec<f64>);

fn im_point(ds: &Dataset, fits: &OlsFits, mec: &[Dag], j: usize) -> Result<(f64, PerDag)> {
    if j >= ds.p() {
        return Err(dim("mediator index out of range"));
    }
    let th = fits.theta_ma[j];
    let dm = fits.beta_ym[j] * th;
    let mut xi = BTreeMap::new();
    for (pa, _) in distinct_parent_sets(mec, j) {
        let v = reg_coef_first(ds, j, &pa)?;
        xi.insert(pa, v);
    }
    let mut tm = Vec::with_capacity(mec.len());
    let mut im = Vec::with_capacity(mec.len());
    for g in mec {
        let t = th * xi[&g.parents(j)];
        tm.push(t);
        im.push(t - dm);
    }
    let avg = im.iter().sum::<f64>() / mec.len() as f64;
    Ok((avg, (tm, im)))
}

/// Standard error of the averaged indirect effect from its influence-type expansion.
fn im_analytic_se(ds: &Dataset, fits: &OlsFits, mec: &[Dag], j: usize) -> Result<f64> {
    let n = ds.n();
    let nf = n as f64;
    let p = ds.p();
    let th = fits.theta_ma[j];
    let beta_j = fits.beta_ym[j];
    let y = ds.y_dvec();

    let sets = distinct_parent_sets(mec, j);
    let total: usize = sets.iter().map(|s| s.1).sum();
    let mut w = DVector::<f64>::zeros(n);
    let mut xi_bar = 0.0;
    for (pa, mult) in &sets {
        let (x, rest) = conditional_design(ds, j, pa);
        let f = ols_fit(&x, &y)?;
        xi_bar += f.coefficients[1] * *mult as f64 / total as f64;
        let r = f.residuals;
        let mj = DMatrix::from_column_slice(n, 1, ds.mediator_dvec(j).as_slice());
        let g = gamma_transform(&mj, &rest)?;
        let share = *mult as f64 / total as f64;
        for i in 0..n {
            w[i] += share * nf * g[(0, i)] * r[i];
        }
    }

    let m = mediator_block(ds);
    let g_m = gamma_transform(&m, &ds.design(&[Col::Conf, Col::Exposure]))?;
    let gm_jj = (g_m.row(j) * g_m.row(j).transpose())[(0, 0)];
    let g_ac = gamma_transform(&exposure_col(ds), &ds.design(&[Col::Conf]))?;
    let gac = (&g_ac * g_ac.transpose())[(0, 0)];

    // Structural equations of the first member: each mediator on its parents, A and C.
    let first = &mec[0];
    let mut b = DMatrix::<f64>::zeros(p, p);
    let mut sigma = DVector::<f64>::zeros(p);
    let mut eps_j = DVector::<f64>::zeros(n);
    for k in 0..p {
        let pa = first.parents(k);
        let mut cols: Vec<Col> = pa.iter().map(|&q| Col::Mediator(q)).collect();
        cols.push(Col::Exposure);
        cols.push(Col::Conf);
        let f = ols_fit(&ds.design(&cols), &ds.mediator_dvec(k))?;
        for (r, &q) in pa.iter().enumerate() {
            b[(q, k)] = f.coefficients[1 + r];
        }
        sigma[k] = f.rss() / nf;
        if k == j {
            eps_j = f.residuals.clone();
        }
    }
    let ib = DMatrix::<f64>::identity(p, p) - b.transpose();
    let inv = ib
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - Bᵀ is singular".into()))?;
    let v = &inv * DMatrix::from_diagonal(&sigma) * inv.transpose();
    let sd_j = sigma[j].sqrt();
    if sd_j > 0.0 {
        eps_j /= sd_j;
    }

    let xi_minus_beta = xi_bar - beta_j;
    let k_y = (nf * gm_jj).max(0.0).sqrt();
    let k_m = (nf * gac).max(0.0).sqrt() * v[(j, j)].max(0.0).sqrt();
    let eps_y = &fits.outcome.residuals;
    let mut s2 = 0.0;
    for i in 0..n {
        let term = th * (w[i] + k_y * eps_y[i]) + xi_minus_beta * k_m * eps_j[i];
        s2 += term * term;
    }
    Ok((s2 / nf).sqrt() / nf.sqrt())
}
