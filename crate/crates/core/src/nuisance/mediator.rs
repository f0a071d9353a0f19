use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::propensity::{fit_binary_glm, Link, Propensity};
use crate::dataset::{Col, Dataset};
use crate::error::{dim, Error, Result};
use crate::linmodel::{cholesky_jitter, ols_fit, residual_covariance, sub_matrix, GaussianLaw};

/// Conditional law of the mediators given `(C, A)`.
pub trait MediatorLaw: Send + Sync {
    fn dim(&self) -> usize;

    /// `E[M | C = c, A = a]`.
    fn mean(&self, c: &[f64], a: f64, out: &mut [f64]);

    /// Law of `M_target | M_given, C, A`, prepared once and evaluated many times.
    fn conditional(&self, target: &[usize], given: &[usize]) -> Result<Box<dyn ConditionalLaw + '_>>;

    fn is_discrete(&self) -> bool {
        false
    }

    fn as_gaussian(&self) -> Option<&GaussianMediatorLaw> {
        None
    }

    fn as_bernoulli(&self) -> Option<&BernoulliMediatorLaw> {
        None
    }
}

/// Prepared conditional law `π_{c,a,m_given}(m_target)`.
pub trait ConditionalLaw: Send + Sync {
    fn target(&self) -> &[usize];

    fn density(&self, c: &[f64], a: f64, target: &[f64], given: &[f64]) -> f64;

    fn sample(&self, c: &[f64], a: f64, given: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);
}

/// `M = b₀ + Θ_MC c + θ_MA a + e`, `e ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMediatorLaw {
    pub intercept: Vec<f64>,
    /// `p × (t-1)`.
    pub theta_mc: DMatrix<f64>,
    pub theta_ma: Vec<f64>,
    pub noise: GaussianLaw,
}

impl GaussianMediatorLaw {
    pub fn p(&self) -> usize {
        self.theta_ma.len()
    }

    /// Gaussian law of `M | C = c, A = a`.
    pub fn law_at(&self, c: &[f64], a: f64) -> GaussianLaw {
        let mut m = vec![0.0; self.p()];
        self.mean(c, a, &mut m);
        GaussianLaw {
            mean: DVector::from_vec(m),
            cov: self.noise.cov.clone(),
        }
    }
}

impl MediatorLaw for GaussianMediatorLaw {
    fn dim(&self) -> usize {
        self.p()
    }

    fn mean(&self, c: &[f64], a: f64, out: &mut [f64]) {
        for k in 0..self.p() {
            let mut v = self.intercept[k] + self.theta_ma[k] * a;
            for (l, x) in c.iter().enumerate() {
                v += self.theta_mc[(k, l)] * x;
            }
            out[k] = v;
        }
    }

    fn conditional(&self, target: &[usize], given: &[usize]) -> Result<Box<dyn ConditionalLaw + '_>> {
        let p = self.p();
        if target.iter().chain(given).any(|&k| k >= p) || target.iter().any(|k| given.contains(k)) {
            return Err(dim("mediator index sets"));
        }
        let cov = &self.noise.cov;
        let s_tt = sub_matrix(cov, target, target);
        let (reg, cond) = if given.is_empty() {
            (DMatrix::zeros(target.len(), 0), s_tt)
        } else {
            let s_gg = sub_matrix(cov, given, given);
            let s_tg = sub_matrix(cov, target, given);
            let chol = cholesky_jitter(&s_gg, "conditioning block")?;
            let reg = chol.solve(&s_tg.transpose()).transpose();
            let mut cond = s_tt - &reg * s_tg.transpose();
            crate::linmodel::symmetrize(&mut cond);
            (reg, cond)
        };
        let k = target.len();
        let (l_inv, log_norm) = if k == 0 {
            (DMatrix::zeros(0, 0), 0.0)
        } else {
            let chol = cholesky_jitter(&cond, "conditional covariance")?;
            let l = chol.l();
            let logdet: f64 = (0..k).map(|i| libm::log(l[(i, i)])).sum::<f64>() * 2.0;
            let l_inv = l
                .solve_lower_triangular(&DMatrix::identity(k, k))
                .ok_or_else(|| Error::Singular("conditional covariance".into()))?;
            (
                l_inv,
                -0.5 * (logdet + k as f64 * libm::log(2.0 * core::f64::consts::PI)),
            )
        };
        let sampler = GaussianLaw {
            mean: DVector::zeros(k),
            cov: cond,
        }
        .sampler();
        Ok(Box::new(GaussianConditional {
            law: self,
            target: target.to_vec(),
            given: given.to_vec(),
            reg,
            l_inv,
            log_norm,
            sampler,
        }))
    }

    fn as_gaussian(&self) -> Option<&GaussianMediatorLaw> {
        Some(self)
    }
}

struct GaussianConditional<'a> {
    law: &'a GaussianMediatorLaw,
    target: Vec<usize>,
    given: Vec<usize>,
    reg: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    log_norm: f64,
    sampler: crate::linmodel::GaussianSampler,
}

impl GaussianConditional<'_> {
    fn cond_mean(&self, c: &[f64], a: f64, given: &[f64], out: &mut [f64]) {
        let p = self.law.p();
        let mut mu = [0.0f64; 16];
        let mut heap;
        let mu: &mut [f64] = if p <= 16 {
            &mut mu[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap
        };
        self.law.mean(c, a, mu);
        for (r, &t) in self.target.iter().enumerate() {
            let mut v = mu[t];
            for (s, &g) in self.given.iter().enumerate() {
                v += self.reg[(r, s)] * (given[s] - mu[g]);
            }
            out[r] = v;
        }
    }
}

impl ConditionalLaw for GaussianConditional<'_> {
    fn target(&self) -> &[usize] {
        &self.target
    }

    fn density(&self, c: &[f64], a: f64, target: &[f64], given: &[f64]) -> f64 {
        let k = self.target.len();
        if k == 0 {
            return 1.0;
        }
        let mut m = vec![0.0; k];
        self.cond_mean(c, a, given, &mut m);
        let mut q = 0.0;
        for r in 0..k {
            let mut z = 0.0;
            for s in 0..=r {
                z += self.l_inv[(r, s)] * (target[s] - m[s]);
            }
            q += z * z;
        }
        libm::exp(self.log_norm - 0.5 * q)
    }

    fn sample(&self, c: &[f64], a: f64, given: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let k = self.target.len();
        let mut m = vec![0.0; k];
        self.cond_mean(c, a, given, &mut m);
        self.sampler.sample(rng, out);
        for r in 0..k {
            out[r] += m[r];
        }
    }
}

/// Per-coordinate OLS of M on (1, C, A); noise covariance from residuals
/// with divisor `n - (t + 1)`.
pub fn fit_mediator_law(ds: &Dataset) -> Result<GaussianMediatorLaw> {
    fit_mediator_law_dropping(ds, &[])
}

/// As [`fit_mediator_law`], but the listed coordinates are regressed on (1, C) only.
pub fn fit_mediator_law_dropping(ds: &Dataset, no_exposure: &[usize]) -> Result<GaussianMediatorLaw> {
    let n = ds.n();
    let p = ds.p();
    let t1 = ds.n_conf();
    if n <= t1 + 2 {
        return Err(Error::Validation("too few rows for the mediator regressions".into()));
    }
    let full = ds.design(&[Col::Conf, Col::Exposure]);
    let reduced = ds.design(&[Col::Conf]);
    let mut res = DMatrix::<f64>::zeros(n, p);
    let mut intercept = vec![0.0; p];
    let mut theta_mc = DMatrix::<f64>::zeros(p, t1);
    let mut theta_ma = vec![0.0; p];
    for k in 0..p {
        let y = ds.mediator_dvec(k);
        let mean = y.mean();
        if y.iter().all(|v| (v - mean).abs() == 0.0) {
            return Err(Error::Validation(alloc::format!("mediator {k} has zero variance")));
        }
        let drop = no_exposure.contains(&k);
        let fit = ols_fit(if drop { &reduced } else { &full }, &y)?;
        intercept[k] = fit.coefficients[0];
        for l in 0..t1 {
            theta_mc[(k, l)] = fit.coefficients[1 + l];
        }
        if !drop {
            theta_ma[k] = fit.coefficients[1 + t1];
        }
        res.set_column(k, &fit.residuals);
    }
    let cov = residual_covariance(&res, t1 + 2);
    Ok(GaussianMediatorLaw {
        intercept,
        theta_mc,
        theta_ma,
        noise: GaussianLaw::new(DVector::zeros(p), cov)?,
    })
}

/// Independent binary mediators, `P(M_k = 1 | c, a) = F(γ_k · (1, c, a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliMediatorLaw {
    pub link: Link,
    /// One row per mediator: intercept, confounders, exposure.
    pub coefficients: Vec<Vec<f64>>,
}

impl BernoulliMediatorLaw {
    pub fn prob(&self, k: usize, c: &[f64], a: f64) -> f64 {
        let g = &self.coefficients[k];
        let t1 = c.len();
        let eta = g[0] + c.iter().zip(&g[1..=t1]).map(|(x, b)| x * b).sum::<f64>() + g[t1 + 1] * a;
        self.link.cdf(eta)
    }
}

impl MediatorLaw for BernoulliMediatorLaw {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn mean(&self, c: &[f64], a: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = self.prob(k, c, a);
        }
    }

    fn conditional(&self, target: &[usize], given: &[usize]) -> Result<Box<dyn ConditionalLaw + '_>> {
        let p = self.dim();
        if target.iter().chain(given).any(|&k| k >= p) || target.iter().any(|k| given.contains(k)) {
            return Err(dim("mediator index sets"));
        }
        Ok(Box::new(BernoulliConditional {
            law: self,
            target: target.to_vec(),
        }))
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn as_bernoulli(&self) -> Option<&BernoulliMediatorLaw> {
        Some(self)
    }
}

struct BernoulliConditional<'a> {
    law: &'a BernoulliMediatorLaw,
    target: Vec<usize>,
}

impl ConditionalLaw for BernoulliConditional<'_> {
    fn target(&self) -> &[usize] {
        &self.target
    }

    fn density(&self, c: &[f64], a: f64, target: &[f64], _given: &[f64]) -> f64 {
        let mut d = 1.0;
        for (r, &k) in self.target.iter().enumerate() {
            let q = self.law.prob(k, c, a);
            d *= if target[r] == 1.0 {
                q
            } else if target[r] == 0.0 {
                1.0 - q
            } else {
                0.0
            };
        }
        d
    }

    fn sample(&self, c: &[f64], a: f64, _given: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        for (r, &k) in self.target.iter().enumerate() {
            let u: f64 = rng.random();
            out[r] = if u < self.law.prob(k, c, a) { 1.0 } else { 0.0 };
        }
    }
}

/// Independent per-coordinate binary regressions of M on (1, C, A).
pub fn fit_bernoulli_mediator_law(ds: &Dataset, link: Link) -> Result<BernoulliMediatorLaw> {
    let x = ds.design(&[Col::Conf, Col::Exposure]);
    let mut coefficients = Vec::with_capacity(ds.p());
    for k in 0..ds.p() {
        let y: Vec<f64> = (0..ds.n()).map(|i| ds.m_row(i)[k]).collect();
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(alloc::format!("mediator {k} is not binary")));
        }
        coefficients.push(fit_binary_glm(&x, &y, link)?);
    }
    Ok(BernoulliMediatorLaw { link, coefficients })
}

/// Exposure arm for [`density_eval`]: a fixed level or the propensity mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Level(f64),
    Marginal,
}

/// `π_{c,a}(m_T | m_G)`, or the mixture `π_c(m_T) = e₀π_{c,0} + e₁π_{c,1}` when
/// `arm` is [`Arm::Marginal`] (unconditional targets only).
#[allow(clippy::too_many_arguments)]
pub fn density_eval(
    law: &dyn MediatorLaw,
    propensity: &dyn Propensity,
    target: &[usize],
    target_vals: &[f64],
    given: &[usize],
    given_vals: &[f64],
    c: &[f64],
    arm: Arm,
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Validation("empty target set".into()));
    }
    let cond = law.conditional(target, given)?;
    Ok(match arm {
        Arm::Level(a) => cond.density(c, a, target_vals, given_vals),
        Arm::Marginal => {
            if !given.is_empty() {
                return Err(Error::Validation("mixture density takes no conditioning set".into()));
            }
            let e1 = propensity.e1(c);
            e1 * cond.density(c, 1.0, target_vals, &[]) + (1.0 - e1) * cond.density(c, 0.0, target_vals, &[])
        }
    })
}

/// `count` i.i.d. draws (row-major) from `π_{c,a}(m_T | m_G)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_conditional<R: RngCore>(
    law: &dyn MediatorLaw,
    target: &[usize],
    given: &[usize],
    given_vals: &[f64],
    c: &[f64],
    a: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let cond = law.conditional(target, given)?;
    let k = target.len();
    let mut out = vec![0.0; count * k];
    for chunk in out.chunks_mut(k.max(1)).take(count) {
        cond.sample(c, a, given_vals, rng, &mut chunk[..k]);
    }
    Ok(out)
}
