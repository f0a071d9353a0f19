//! Simulation designs with known ground truth.
//!
//! A [`SemiLinearTruth`] holds the coefficients of the structural model
//!
//! ```text
//! A ← 1{U ≤ F(β_ACᵀC)}
//! M ← B_MCᵀC + β_MA A + B_MMᵀM + ε_M
//! Y ← β_YCᵀC + α A + β_YMᵀM + ε_Y
//! ```
//!
//! and [`gen_scenario`] draws data from it, or from one of the perturbed
//! designs in [`Scenario`]. [`true_effects`] returns the population effects:
//! closed forms for the linear designs, tensor quadrature otherwise.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::effects_ols::distinct_parent_sets;
use crate::error::{dim, invalid, Error, Result};
use crate::graph::{cpdag_of_dag, enumerate_mec, random_dag, Cpdag, Dag, MEC_CAP};
use crate::linmodel::{cholesky_jitter, GaussianLaw};
use crate::nuisance::{
    FitOptions, GaussianMediatorLaw, LinearMean, Link, MeanSet, MediatorMode, NuisanceBundle, PropensityModel,
};
use crate::rng::{derive_seed, rng};
use crate::special::{expit, gauss_legendre, hermite_grid, norm_pdf};
#[allow(unused_imports)]
use crate::special::Sqrt;

/// Data-generating design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// Probit exposure, linear mediators and outcome.
    AllCorrect,
    /// Logit exposure.
    M0,
    /// Outcome `(β_YCᵀC + αA + β_YMᵀM)^{2/3} + ε`.
    M1,
    /// Mediators other than the focus one have mean `(Θ_k C + θ_k A)^{2/3}`.
    M2,
    /// The focus mediator ignores the exposure and is shifted by `θ_j / 2`.
    M3,
    /// Hidden Gaussian `Z`, observed through nonlinear transforms; nonlinear outcome.
    ContinuousAll,
    /// Binary mediators thresholded on a latent linear model; outcome with interactions.
    DiscreteAll,
}

impl Scenario {
    /// The single-mediator designs.
    pub const SINGLE: [Scenario; 5] = [Scenario::AllCorrect, Scenario::M0, Scenario::M1, Scenario::M2, Scenario::M3];

    pub const ALL: [Scenario; 7] = [
        Scenario::AllCorrect,
        Scenario::M0,
        Scenario::M1,
        Scenario::M2,
        Scenario::M3,
        Scenario::ContinuousAll,
        Scenario::DiscreteAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::AllCorrect => "all_correct",
            Scenario::M0 => "m0",
            Scenario::M1 => "m1",
            Scenario::M2 => "m2",
            Scenario::M3 => "m3",
            Scenario::ContinuousAll => "continuous_all",
            Scenario::DiscreteAll => "discrete_all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.as_str() == t)
            .ok_or_else(|| invalid(format!("unknown scenario `{s}`")))
    }

    /// Link of the exposure model.
    pub fn exposure_link(self) -> Link {
        match self {
            Scenario::M0 => Link::Logit,
            _ => Link::Probit,
        }
    }

    /// Gaussian-linear mediators and outcome, so the effects have closed forms.
    pub fn is_linear(self) -> bool {
        matches!(self, Scenario::AllCorrect | Scenario::M0)
    }

    /// Designs with mediator noise variances drawn from `U[0.5, 1]`.
    pub fn heteroscedastic(self) -> bool {
        matches!(self, Scenario::ContinuousAll | Scenario::DiscreteAll)
    }
}

impl core::fmt::Display for Scenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coefficients of the structural model.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiLinearTruth {
    pub p: usize,
    /// Number of confounders, `t - 1`.
    pub n_conf: usize,
    /// `b_mm[(k, l)]` weights the edge `M_k → M_l`.
    pub b_mm: DMatrix<f64>,
    /// `(t-1) × p`.
    pub b_mc: DMatrix<f64>,
    pub beta_ma: Vec<f64>,
    pub beta_yc: Vec<f64>,
    pub alpha_ya: f64,
    pub beta_ym: Vec<f64>,
    pub beta_ac: Vec<f64>,
    /// Mediator noise variances.
    pub sigma2_m: Vec<f64>,
    /// Outcome noise variance.
    pub sigma2_y: f64,
    /// Mediator singled out by the single-mediator designs.
    pub focus: usize,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SemiLinearTruth {
    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        let c = self.n_conf;
        if p == 0 {
            return Err(invalid("truth needs at least one mediator"));
        }
        if self.b_mm.shape() != (p, p) || self.b_mc.shape() != (c, p) {
            return Err(dim("coefficient matrices have the wrong shape"));
        }
        if self.beta_ma.len() != p || self.beta_ym.len() != p || self.sigma2_m.len() != p {
            return Err(dim("mediator coefficient vectors have the wrong length"));
        }
        if self.beta_yc.len() != c || self.beta_ac.len() != c {
            return Err(dim("confounder coefficient vectors have the wrong length"));
        }
        if self.focus >= p {
            return Err(invalid("focus mediator out of range"));
        }
        if self.sigma2_m.iter().any(|&s| !(s > 0.0)) || !(self.sigma2_y >= 0.0) {
            return Err(invalid("noise variances must be positive"));
        }
        self.dag().map(|_| ())
    }

    /// Mediator DAG implied by the support of `b_mm`.
    pub fn dag(&self) -> Result<Dag> {
        let p = self.p;
        let adj = (0..p * p).map(|ix| self.b_mm[(ix / p, ix % p)] != 0.0).collect();
        Dag::new(p, adj)
    }

    pub fn cpdag(&self) -> Result<Cpdag> {
        Ok(cpdag_of_dag(&self.dag()?))
    }

    /// Members of the mediator DAG's equivalence class.
    pub fn mec(&self) -> Result<Vec<Dag>> {
        enumerate_mec(&self.cpdag()?, MEC_CAP)
    }

    /// `(I − B_MMᵀ)⁻¹`.
    pub fn reduced(&self) -> DMatrix<f64> {
        let i_b = DMatrix::identity(self.p, self.p) - self.b_mm.transpose();
        i_b.try_inverse().expect("acyclic weights give a unit-triangular system")
    }

    /// `θ_MA = (I − B_MMᵀ)⁻¹ β_MA`.
    pub fn theta_ma(&self) -> Vec<f64> {
        (self.reduced() * DVector::from_column_slice(&self.beta_ma)).as_slice().to_vec()
    }

    /// `Θ_MC = (I − B_MMᵀ)⁻¹ B_MCᵀ`, `p × (t-1)`.
    pub fn theta_mc(&self) -> DMatrix<f64> {
        self.reduced() * self.b_mc.transpose()
    }

    /// Covariance of `M` given `(C, A)`.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        let r = self.reduced();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma2_m));
        &r * d * r.transpose()
    }
}

fn uniform_pm1<R: Rng + ?Sized>(r: &mut R) -> f64 {
    r.random_range(-1.0..1.0)
}

/// Random truth with an Erdős–Rényi mediator graph of expected degree `⌊p/2⌋`
/// over a random topological order, and coefficients drawn from `U(-1, 1)`.
///
/// # Panics
/// If `p == 0` or `t == 0`.
pub fn random_er_truth(p: usize, t: usize, seed: u64) -> SemiLinearTruth {
    assert!(p >= 1 && t >= 1, "need p ≥ 1 and t ≥ 1");
    let c = t - 1;
    let mut r = rng(seed);
    let prob = if p > 1 { (p / 2) as f64 / (p - 1) as f64 } else { 0.0 };
    let g = random_dag(p, prob, &mut r);
    let mut b_mm = DMatrix::zeros(p, p);
    for k in 0..p {
        for l in 0..p {
            if g.has_edge(k, l) {
                b_mm[(k, l)] = uniform_pm1(&mut r);
            }
        }
    }
    let b_mc = DMatrix::from_fn(c, p, |_, _| uniform_pm1(&mut r));
    let beta_ma = (0..p).map(|_| uniform_pm1(&mut r)).collect();
    let beta_yc = (0..c).map(|_| uniform_pm1(&mut r)).collect();
    let alpha_ya = uniform_pm1(&mut r);
    let beta_ym = (0..p).map(|_| uniform_pm1(&mut r)).collect();
    let beta_ac = (0..c).map(|_| uniform_pm1(&mut r)).collect();
    let focus = r.random_range(0..p);
    SemiLinearTruth {
        p,
        n_conf: c,
        b_mm,
        b_mc,
        beta_ma,
        beta_yc,
        alpha_ya,
        beta_ym,
        beta_ac,
        sigma2_m: vec![1.0; p],
        sigma2_y: 1.0,
        focus,
        scenario: Scenario::AllCorrect,
        seed,
    }
}

/// [`random_er_truth`] tagged with `scenario`, with noise variances from
/// `U[0.5, 1]` where the design calls for them.
pub fn random_truth(scenario: Scenario, p: usize, t: usize, seed: u64) -> SemiLinearTruth {
    let mut truth = random_er_truth(p, t, seed);
    truth.scenario = scenario;
    if scenario.heteroscedastic() {
        let mut r = rng(derive_seed(seed, 0x5167));
        truth.sigma2_m = (0..p).map(|_| r.random_range(0.5..1.0)).collect();
    }
    truth
}

/// `x^{2/3}`, real for negative `x`.
pub fn pow23(x: f64) -> f64 {
    let c = libm::cbrt(x);
    c * c
}

/// Covariate transforms hiding `z`: blocks of four `exp(z₁/2)`,
/// `z₂/(1 + exp(z₁)) + 10`, `(z₁z₃/25 + 0.6)³`, `(z₂ + z₄ + 20)²`, repeated
/// over consecutive blocks.
pub fn kang_schafer(z: &[f64], out: &mut [f64]) {
    for k in 0..z.len() {
        let base = k - k % 4;
        out[k] = match k % 4 {
            0 => libm::exp(z[k] / 2.0),
            1 => z[k] / (1.0 + libm::exp(z[base])) + 10.0,
            2 => {
                let v = z[base] * z[k] / 25.0 + 0.6;
                v * v * v
            }
            _ => {
                let v = z[base + 1] + z[k] + 20.0;
                v * v
            }
        };
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `n` rows from `scenario` under `truth`.
pub fn gen_scenario(truth: &SemiLinearTruth, scenario: Scenario, n: usize, seed: u64) -> Result<Dataset> {
    truth.validate()?;
    let p = truth.p;
    let nc = truth.n_conf;
    let j = truth.focus;
    let theta_mc = truth.theta_mc();
    let theta_ma = truth.theta_ma();
    let reduced = truth.reduced();
    let sd_m: Vec<f64> = truth.sigma2_m.iter().map(|s| s.sqrt()).collect();
    let sd_y = truth.sigma2_y.sqrt();
    let mut r = rng(seed);

    let mut c_out = Vec::with_capacity(n * nc);
    let mut a_out = Vec::with_capacity(n);
    let mut m_out = Vec::with_capacity(n * p);
    let mut y_out = Vec::with_capacity(n);
    let mut z = vec![0.0; nc];
    let mut lin = vec![0.0; p];
    let mut m = vec![0.0; p];
    let mut shocks = DVector::zeros(p);
    let mut obs_c = vec![0.0; nc];

    for _ in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut r);
        }
        let u: f64 = r.random();
        let score = dot(&truth.beta_ac, &z);
        let a = if u <= scenario.exposure_link().cdf(score) { 1.0 } else { 0.0 };

        for k in 0..p {
            let s: f64 = StandardNormal.sample(&mut r);
            shocks[k] = sd_m[k] * s;
        }
        let eta = &reduced * &shocks;
        for k in 0..p {
            let tc: f64 = (0..nc).map(|l| theta_mc[(k, l)] * z[l]).sum();
            lin[k] = tc + theta_ma[k] * a;
            m[k] = match scenario {
                Scenario::M2 if k != j => pow23(lin[k]) + eta[k],
                Scenario::M3 if k == j => tc + 0.5 * theta_ma[k] + eta[k],
                Scenario::DiscreteAll => {
                    let u: f64 = r.random();
                    if u <= expit(lin[k] + eta[k]) {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => lin[k] + eta[k],
            };
        }

        let e: f64 = StandardNormal.sample(&mut r);
        let yc = dot(&truth.beta_yc, &z);
        let ym = dot(&truth.beta_ym, &m);
        let y = match scenario {
            Scenario::M1 => pow23(yc + truth.alpha_ya * a + ym),
            Scenario::ContinuousAll => yc + pow23(truth.alpha_ya * a + ym),
            Scenario::DiscreteAll => (1.0 + a) * (yc + ym) + truth.alpha_ya * a,
            _ => yc + truth.alpha_ya * a + ym,
        } + sd_y * e;

        if scenario == Scenario::ContinuousAll {
            kang_schafer(&z, &mut obs_c);
            c_out.extend_from_slice(&obs_c);
        } else {
            c_out.extend_from_slice(&z);
        }
        a_out.push(a);
        m_out.extend_from_slice(&m);
        y_out.push(y);
    }
    Dataset::from_blocks(nc, p, c_out, a_out, m_out, y_out)
}

/// Population effects of one mediator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueEffects {
    pub j: usize,
    pub dm: f64,
    /// `IM_j` averaged over the equivalence class of the true mediator DAG.
    pub im: f64,
    pub tm: f64,
    pub tm_per_dag: Vec<f64>,
    pub im_per_dag: Vec<f64>,
    pub de: f64,
    pub ie: f64,
    pub te: f64,
    /// Largest change between two quadrature orders; zero for closed forms.
    pub error_bound: f64,
}

/// Largest tolerated quadrature self-check discrepancy.
pub const QUADRATURE_TOL: f64 = 1e-4;

/// Node counts of the quadrature rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadOrder {
    /// Gauss–Hermite nodes per confounder dimension.
    pub conf: usize,
    /// Nodes of the inner rules (per latent dimension for binary mediators,
    /// per panel for the outcome transform).
    pub inner: usize,
}

impl QuadOrder {
    pub const COARSE: QuadOrder = QuadOrder { conf: 20, inner: 16 };
    pub const FINE: QuadOrder = QuadOrder { conf: 28, inner: 24 };
}

/// Population effects of mediator `j` under `truth.scenario`.
///
/// Linear designs use closed forms. The others are integrated at two
/// quadrature orders; the finer result is returned and the discrepancy is
/// reported as `error_bound`.
pub fn true_effects(truth: &SemiLinearTruth, j: usize) -> Result<TrueEffects> {
    truth.validate()?;
    if truth.scenario.is_linear() {
        return closed_form_effects(truth, j);
    }
    let coarse = quadrature_effects(truth, j, QuadOrder::COARSE)?;
    let mut fine = quadrature_effects(truth, j, QuadOrder::FINE)?;
    let bound = max_gap(&coarse, &fine);
    if !(bound <= QUADRATURE_TOL) {
        return Err(Error::Convergence(format!(
            "quadrature orders disagree by {bound:.2e} in scenario {}",
            truth.scenario
        )));
    }
    fine.error_bound = bound;
    Ok(fine)
}

fn max_gap(a: &TrueEffects, b: &TrueEffects) -> f64 {
    let mut g: f64 = 0.0;
    for (x, y) in [(a.dm, b.dm), (a.im, b.im), (a.tm, b.tm), (a.de, b.de), (a.ie, b.ie), (a.te, b.te)] {
        g = g.max((x - y).abs());
    }
    for (x, y) in a.tm_per_dag.iter().zip(&b.tm_per_dag) {
        g = g.max((x - y).abs());
    }
    g
}

/// Weights `w = Σ_SS⁻¹ Σ_S· β` of `E[βᵀM | M_S]` and the residual variance
/// `Var(βᵀM | M_S)`.
pub fn regression_weights(sigma: &DMatrix<f64>, beta: &[f64], s: &[usize]) -> Result<(Vec<f64>, f64)> {
    let b = DVector::from_column_slice(beta);
    let total = (b.transpose() * sigma * &b)[(0, 0)];
    if s.is_empty() {
        return Ok((Vec::new(), total));
    }
    let k = s.len();
    let ss = DMatrix::from_fn(k, k, |r, c| sigma[(s[r], s[c])]);
    let cross = DVector::from_fn(k, |r, _| (0..beta.len()).map(|l| sigma[(s[r], l)] * beta[l]).sum());
    let w = cholesky_jitter(&ss, "mediator covariance block")?.solve(&cross);
    let res = total - w.dot(&cross);
    Ok((w.as_slice().to_vec(), res.max(0.0)))
}

/// Per-DAG parent-set indices and the distinct parent sets.
fn parent_layout(mec: &[Dag], j: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let sets: Vec<Vec<usize>> = distinct_parent_sets(mec, j).into_iter().map(|(pa, _)| pa).collect();
    let idx = mec
        .iter()
        .map(|g| {
            let pa = g.parents(j);
            sets.iter().position(|s| *s == pa).expect("every member's parent set is listed")
        })
        .collect();
    (sets, idx)
}

fn assemble(j: usize, dm: f64, de: f64, te: f64, tm_sets: &[f64], idx: &[usize]) -> TrueEffects {
    let tm_per_dag: Vec<f64> = idx.iter().map(|&r| tm_sets[r]).collect();
    let im_per_dag: Vec<f64> = tm_per_dag.iter().map(|tm| tm - dm).collect();
    let l = tm_per_dag.len() as f64;
    let tm = tm_per_dag.iter().sum::<f64>() / l;
    TrueEffects {
        j,
        dm,
        im: tm - dm,
        tm,
        tm_per_dag,
        im_per_dag,
        de,
        ie: te - de,
        te,
        error_bound: 0.0,
    }
}

/// Closed forms for Gaussian-linear truths: `DM_j = β_jθ_j`,
/// `TM_j(G) = θ_j · w_j(Pa_j(G))`, `DE = α`, `IE = β_YMᵀθ_MA`.
///
/// Valid for any exposure model, since only `M | C, A` and `Y | C, A, M` enter.
pub fn closed_form_effects(truth: &SemiLinearTruth, j: usize) -> Result<TrueEffects> {
    truth.validate()?;
    if j >= truth.p {
        return Err(invalid("mediator index out of range"));
    }
    let theta = truth.theta_ma();
    let sigma = truth.noise_cov();
    let beta = &truth.beta_ym;
    let mec = truth.mec()?;
    let (sets, idx) = parent_layout(&mec, j);
    let mut tm_sets = Vec::with_capacity(sets.len());
    for pa in &sets {
        let mut s = vec![j];
        s.extend_from_slice(pa);
        let (w, _) = regression_weights(&sigma, beta, &s)?;
        tm_sets.push(theta[j] * w[0]);
    }
    let de = truth.alpha_ya;
    let te = de + dot(beta, &theta);
    Ok(assemble(j, beta[j] * theta[j], de, te, &tm_sets, &idx))
}

/// `E[|X|^{2/3}]` for `X ~ N(μ, v)`, by Gauss–Legendre panels after the
/// substitution `x = u³`, which removes the cusp at zero.
pub fn pow23_expectation(mu: f64, v: f64, order: usize) -> f64 {
    let s = v.max(0.0).sqrt();
    if s < 1e-12 {
        return pow23(mu);
    }
    let lo = libm::cbrt(mu - 12.0 * s);
    let hi = libm::cbrt(mu + 12.0 * s);
    let rule = gauss_legendre(order);
    const PANELS: usize = 12;
    let h = (hi - lo) / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        let a = lo + k as f64 * h;
        let mid = a + 0.5 * h;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let u = mid + 0.5 * h * x;
            let u2 = u * u;
            let dens = norm_pdf((u2 * u - mu) / s) / s;
            total += 0.5 * h * w * 3.0 * u2 * u2 * dens;
        }
    }
    total
}

/// Population effects by quadrature at a single order.
pub fn quadrature_effects(truth: &SemiLinearTruth, j: usize, order: QuadOrder) -> Result<TrueEffects> {
    truth.validate()?;
    if j >= truth.p {
        return Err(invalid("mediator index out of range"));
    }
    if truth.n_conf > 4 {
        return Err(invalid("quadrature supports at most four confounders"));
    }
    let mec = truth.mec()?;
    let (sets, idx) = parent_layout(&mec, j);
    let (points, weights) = hermite_grid(truth.n_conf, order.conf);
    let nc = truth.n_conf;
    let mut acc = vec![0.0; 3 + 2 * sets.len()];
    let mut vals = vec![0.0; acc.len()];
    let eval: Box<dyn Fn(&[f64], &mut [f64]) -> Result<()>> = if truth.scenario == Scenario::DiscreteAll {
        let eng = BinaryEngine::new(truth, j, &sets, order.inner)?;
        Box::new(move |z, out| eng.node(z, out))
    } else {
        let eng = GaussianEngine::new(truth, j, &sets, order.inner)?;
        Box::new(move |z, out| {
            eng.node(z, out);
            Ok(())
        })
    };
    for (q, w) in weights.iter().enumerate() {
        eval(&points[q * nc..(q + 1) * nc], &mut vals)?;
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += w * v;
        }
    }
    // acc = [ζ(1) − ζ(0), κ(1) − κ(0), E μ(C,1,M⁽⁰⁾) − κ(0), (E ϱ(1) − E ϱ(0)) per set ...]
    let dm = acc[0];
    let te = acc[1];
    let de = acc[2];
    let tm_sets: Vec<f64> = (0..sets.len()).map(|r| te - acc[3 + r]).collect();
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite quadrature value".into()));
    }
    Ok(assemble(j, dm, de, te, &tm_sets, &idx))
}

/// Truths whose mediators are Gaussian given `(C, A)` with constant covariance
/// and whose outcome mean is `ℓ(c, a) + φ(g(c, a) + β_YMᵀm)`, with `φ` the
/// identity or `x ↦ x^{2/3}`.
struct GaussianEngine<'a> {
    truth: &'a SemiLinearTruth,
    j: usize,
    theta_mc: DMatrix<f64>,
    theta_ma: Vec<f64>,
    nonlinear: bool,
    order: usize,
    v_full: f64,
    v_zeta: f64,
    sets: Vec<(Vec<f64>, f64)>,
    /// Exact `E_C[(Θ_k C + θ_k a)^{2/3}]` per arm, used where the integrand is
    /// linear in that mean.
    smoothed: [Vec<f64>; 2],
}

impl<'a> GaussianEngine<'a> {
    fn new(truth: &'a SemiLinearTruth, j: usize, sets: &[Vec<usize>], order: usize) -> Result<Self> {
        let sigma = truth.noise_cov();
        let beta = &truth.beta_ym;
        let p = truth.p;
        let (_, v_full) = regression_weights(&sigma, beta, &[])?;
        let mut v_zeta = beta[j] * beta[j] * sigma[(j, j)];
        for k in 0..p {
            for l in 0..p {
                if k != j && l != j {
                    v_zeta += beta[k] * sigma[(k, l)] * beta[l];
                }
            }
        }
        let mut prepared = Vec::with_capacity(sets.len());
        for pa in sets {
            let mut s = vec![j];
            s.extend_from_slice(pa);
            let (w, res) = regression_weights(&sigma, beta, &s)?;
            // Spread of the argument once Pa ~ π_{a'} and M_j ~ the mixture are integrated out.
            let mut v = res + w[0] * w[0] * sigma[(j, j)];
            for (x, &k) in pa.iter().enumerate() {
                for (y, &l) in pa.iter().enumerate() {
                    v += w[1 + x] * sigma[(k, l)] * w[1 + y];
                }
            }
            prepared.push((w, v));
        }
        let theta_mc = truth.theta_mc();
        let theta_ma = truth.theta_ma();
        let smoothed = [0.0, 1.0].map(|a| {
            (0..p)
                .map(|k| {
                    let var: f64 = (0..truth.n_conf).map(|l| theta_mc[(k, l)] * theta_mc[(k, l)]).sum();
                    pow23_expectation(theta_ma[k] * a, var, order.max(16))
                })
                .collect()
        });
        Ok(GaussianEngine {
            truth,
            j,
            theta_mc,
            theta_ma,
            nonlinear: matches!(truth.scenario, Scenario::M1 | Scenario::ContinuousAll),
            order,
            v_full,
            v_zeta,
            sets: prepared,
            smoothed,
        })
    }

    fn h(&self, mu: f64, v: f64) -> f64 {
        if self.nonlinear {
            pow23_expectation(mu, v, self.order)
        } else {
            mu
        }
    }

    fn mediator_means(&self, z: &[f64], a: f64, out: &mut [f64]) {
        let t = self.truth;
        for k in 0..t.p {
            let tc: f64 = (0..t.n_conf).map(|l| self.theta_mc[(k, l)] * z[l]).sum();
            out[k] = match t.scenario {
                // Every effect is linear in these means with coefficients free
                // of C, so their exact C-average can stand in for them.
                Scenario::M2 if k != self.j => self.smoothed[a as usize][k],
                Scenario::M3 if k == self.j => tc + 0.5 * self.theta_ma[k],
                _ => tc + self.theta_ma[k] * a,
            };
        }
    }

    /// `(ℓ(z, a), g(z, a))`.
    fn outcome_parts(&self, z: &[f64], a: f64) -> (f64, f64) {
        let t = self.truth;
        let yc = dot(&t.beta_yc, z);
        match t.scenario {
            Scenario::ContinuousAll => (yc, t.alpha_ya * a),
            _ => (0.0, yc + t.alpha_ya * a),
        }
    }

    fn node(&self, z: &[f64], out: &mut [f64]) {
        let t = self.truth;
        let p = t.p;
        let j = self.j;
        let beta = &t.beta_ym;
        let e1 = t.scenario.exposure_link().cdf(dot(&t.beta_ac, z));
        let e = [1.0 - e1, e1];
        let mut mb = [vec![0.0; p], vec![0.0; p]];
        self.mediator_means(z, 0.0, &mut mb[0]);
        self.mediator_means(z, 1.0, &mut mb[1]);
        let parts = [self.outcome_parts(z, 0.0), self.outcome_parts(z, 1.0)];
        let lin = [dot(beta, &mb[0]), dot(beta, &mb[1])];

        let other0 = lin[0] - beta[j] * mb[0][j];
        let zeta = |a: usize| parts[1].0 + self.h(parts[1].1 + beta[j] * mb[a][j] + other0, self.v_zeta);
        let kappa = |a: usize| parts[a].0 + self.h(parts[a].1 + lin[a], self.v_full);
        let k0 = kappa(0);
        let k1 = kappa(1);
        out[0] = zeta(1) - zeta(0);
        out[1] = k1 - k0;
        out[2] = parts[1].0 + self.h(parts[1].1 + lin[0], self.v_full) - k0;
        for (r, (w, v)) in self.sets.iter().enumerate() {
            let erho = |a: usize| {
                let mut s = 0.0;
                for b in 0..2 {
                    s += e[b] * self.h(parts[a].1 + lin[a] + w[0] * (mb[b][j] - mb[a][j]), *v);
                }
                parts[a].0 + s
            };
            out[3 + r] = erho(1) - erho(0);
        }
    }
}

/// Binary mediators `M_k = 1{logit U ≤ Θ_k c + θ_k a + η_k}` with correlated
/// Gaussian `η`, and outcome mean `(1 + a)(β_YCᵀc + β_YMᵀm) + α a`.
struct BinaryEngine<'a> {
    truth: &'a SemiLinearTruth,
    j: usize,
    theta_mc: DMatrix<f64>,
    theta_ma: Vec<f64>,
    /// Latent noise nodes (row-major, `p` per node) and weights.
    eta: (Vec<f64>, Vec<f64>),
    sets: Vec<Vec<usize>>,
}

impl<'a> BinaryEngine<'a> {
    fn new(truth: &'a SemiLinearTruth, j: usize, sets: &[Vec<usize>], order: usize) -> Result<Self> {
        let p = truth.p;
        if p > 4 {
            return Err(invalid("binary-mediator quadrature supports at most four mediators"));
        }
        let order = if p == 4 { order.min(14) } else { order };
        let l = cholesky_jitter(&truth.noise_cov(), "latent covariance")?.l();
        let (u, w) = hermite_grid(p, order);
        let mut eta = vec![0.0; u.len()];
        for q in 0..w.len() {
            for k in 0..p {
                eta[q * p + k] = (0..=k).map(|c| l[(k, c)] * u[q * p + c]).sum();
            }
        }
        Ok(BinaryEngine {
            truth,
            j,
            theta_mc: truth.theta_mc(),
            theta_ma: truth.theta_ma(),
            eta: (eta, w),
            sets: sets.to_vec(),
        })
    }

    /// Probabilities of the `2^p` mediator patterns (bit `k` is `M_k`).
    fn cells(&self, z: &[f64], a: f64) -> Vec<f64> {
        let t = self.truth;
        let p = t.p;
        let lin: Vec<f64> = (0..p)
            .map(|k| (0..t.n_conf).map(|l| self.theta_mc[(k, l)] * z[l]).sum::<f64>() + self.theta_ma[k] * a)
            .collect();
        let mut cells = vec![0.0; 1 << p];
        let (eta, w) = &self.eta;
        let mut pr = vec![0.0; p];
        for (q, wq) in w.iter().enumerate() {
            for k in 0..p {
                pr[k] = expit(lin[k] + eta[q * p + k]);
            }
            for (m, cell) in cells.iter_mut().enumerate() {
                let mut v = *wq;
                for (k, &pk) in pr.iter().enumerate() {
                    v *= if m >> k & 1 == 1 { pk } else { 1.0 - pk };
                }
                *cell += v;
            }
        }
        cells
    }

    fn mu(&self, z: &[f64], a: f64, m: usize) -> f64 {
        let t = self.truth;
        let ym: f64 = (0..t.p).filter(|&k| m >> k & 1 == 1).map(|k| t.beta_ym[k]).sum();
        (1.0 + a) * (dot(&t.beta_yc, z) + ym) + t.alpha_ya * a
    }

    fn node(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let t = self.truth;
        let p = t.p;
        let j = self.j;
        let e1 = t.scenario.exposure_link().cdf(dot(&t.beta_ac, z));
        let e = [1.0 - e1, e1];
        let cells = [self.cells(z, 0.0), self.cells(z, 1.0)];
        let mut means = [vec![0.0; p], vec![0.0; p]];
        for a in 0..2 {
            for (m, pm) in cells[a].iter().enumerate() {
                for k in 0..p {
                    if m >> k & 1 == 1 {
                        means[a][k] += pm;
                    }
                }
            }
        }
        // μ is affine in m, so the product-law integral only needs marginal means.
        let yc = dot(&t.beta_yc, z);
        let zeta = |a: usize| {
            let ym: f64 = (0..p)
                .map(|k| t.beta_ym[k] * if k == j { means[a][k] } else { means[0][k] })
                .sum();
            2.0 * (yc + ym) + t.alpha_ya
        };
        let kappa = |a: usize| -> f64 {
            cells[a]
                .iter()
                .enumerate()
                .map(|(m, pm)| pm * self.mu(z, a as f64, m))
                .sum()
        };
        let k0 = kappa(0);
        let k1 = kappa(1);
        let cross: f64 = cells[0].iter().enumerate().map(|(m, pm)| pm * self.mu(z, 1.0, m)).sum();
        out[0] = zeta(1) - zeta(0);
        out[1] = k1 - k0;
        out[2] = cross - k0;
        let jbit = 1usize << j;
        let mix1 = e[0] * means[0][j] + e[1] * means[1][j];
        let mix = [1.0 - mix1, mix1];
        for (r, pa) in self.sets.iter().enumerate() {
            let pmask: usize = pa.iter().map(|&k| 1usize << k).sum();
            let erho = |a: usize| -> Result<f64> {
                let mut prob: BTreeMap<usize, f64> = BTreeMap::new();
                let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
                for (m, pm) in cells[a].iter().enumerate() {
                    let key = m & (pmask | jbit);
                    *prob.entry(key).or_insert(0.0) += pm;
                    *mass.entry(key).or_insert(0.0) += pm * self.mu(z, a as f64, m);
                }
                let mut s = 0.0;
                let mut pa_prob: BTreeMap<usize, f64> = BTreeMap::new();
                for (&key, &pr) in &prob {
                    *pa_prob.entry(key & pmask).or_insert(0.0) += pr;
                }
                for (&pk, &ppa) in &pa_prob {
                    for (bit, wmix) in mix.iter().enumerate() {
                        let key = pk | if bit == 1 { jbit } else { 0 };
                        let pr = prob.get(&key).copied().unwrap_or(0.0);
                        if pr <= 0.0 {
                            return Err(Error::Numerical("empty mediator cell".into()));
                        }
                        s += ppa * wmix * mass[&key] / pr;
                    }
                }
                Ok(s)
            };
            out[3 + r] = erho(1)? - erho(0)?;
        }
        Ok(())
    }
}

/// Nuisance bundle holding the true propensity, mediator law and outcome
/// means of a Gaussian-linear truth, for each mean set in `sets`.
pub fn oracle_bundle(truth: &SemiLinearTruth, sets: &[MeanSet]) -> Result<NuisanceBundle> {
    truth.validate()?;
    if !truth.scenario.is_linear() {
        return Err(invalid("oracle nuisances need a Gaussian-linear truth"));
    }
    let p = truth.p;
    let nc = truth.n_conf;
    let theta_mc = truth.theta_mc();
    let theta_ma = truth.theta_ma();
    let sigma = truth.noise_cov();
    let link = truth.scenario.exposure_link();
    let mut coefficients = vec![0.0];
    coefficients.extend_from_slice(&truth.beta_ac);
    let propensity = PropensityModel {
        link,
        coefficients,
        clip: 1e-6,
    };
    let mediators = GaussianMediatorLaw {
        intercept: vec![0.0; p],
        theta_mc: theta_mc.clone(),
        theta_ma: theta_ma.clone(),
        noise: GaussianLaw::new(DVector::zeros(p), sigma.clone())?,
    };
    let beta = &truth.beta_ym;
    let mut bundle = NuisanceBundle {
        propensity: Box::new(propensity),
        mediators: Box::new(mediators),
        means: BTreeMap::new(),
        options: FitOptions {
            link,
            clip: 1e-6,
            mediator: MediatorMode::Gaussian,
        },
        drop_conf_in_means: false,
    };
    for set in sets {
        if !set.conf || !set.exposure || set.mediators.iter().any(|&k| k >= p) {
            return Err(invalid("oracle means condition on C, A and existing mediators"));
        }
        let s = &set.mediators;
        let (w, _) = regression_weights(&sigma, beta, s)?;
        let mut coef_c = truth.beta_yc.clone();
        for (l, c) in coef_c.iter_mut().enumerate() {
            *c += (0..p).map(|k| theta_mc[(k, l)] * beta[k]).sum::<f64>();
            *c -= s.iter().zip(&w).map(|(&k, wk)| theta_mc[(k, l)] * wk).sum::<f64>();
        }
        let coef_a =
            truth.alpha_ya + dot(beta, &theta_ma) - s.iter().zip(&w).map(|(&k, wk)| theta_ma[k] * wk).sum::<f64>();
        let mut coef_m = vec![0.0; p];
        for (&k, wk) in s.iter().zip(&w) {
            coef_m[k] = *wk;
        }
        debug_assert_eq!(coef_c.len(), nc);
        bundle.insert_mean(Box::new(LinearMean {
            set: set.clone(),
            intercept: 0.0,
            coef_c,
            coef_a,
            coef_m,
        }));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::ols_fit;
    use crate::dataset::Col;

    fn chain_truth() -> SemiLinearTruth {
        let mut t = random_er_truth(3, 3, 5);
        t.b_mm = DMatrix::zeros(3, 3);
        t.b_mm[(0, 1)] = 0.7;
        t.b_mm[(1, 2)] = -0.5;
        t
    }

    #[test]
    fn er_truth_examples() {
        let t = random_er_truth(1, 3, 9);
        assert_eq!(t.b_mm[(0, 0)], 0.0);
        assert_eq!(random_er_truth(4, 3, 17), random_er_truth(4, 3, 17));
        let mut edges = 0usize;
        for s in 0..1000 {
            let t = random_er_truth(4, 2, s);
            edges += t.b_mm.iter().filter(|&&v| v != 0.0).count();
            for v in t.beta_ym.iter().chain(&t.beta_ma).chain(&t.beta_yc) {
                assert!((-1.0..1.0).contains(v));
            }
        }
        let avg = edges as f64 / 1000.0;
        assert!((avg - 4.0).abs() < 0.4, "average edge count {avg}");
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.as_str()).unwrap(), s);
        }
        assert!(Scenario::parse("m9").is_err());
    }

    #[test]
    fn pow23_expectation_matches_series() {
        // E|X|^ν = s^ν 2^{ν/2} Γ((ν+1)/2)/√π · e^{-x} ₁F₁((1+ν)/2; 1/2; x), x = μ²/2s².
        let oracle = |mu: f64, v: f64| {
            let nu = 2.0 / 3.0;
            let s = v.sqrt();
            let x = mu * mu / (2.0 * v);
            let (a, b) = ((1.0 + nu) / 2.0, 0.5);
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 0..400 {
                let k = k as f64;
                term *= (a + k) / (b + k) * x / (k + 1.0);
                sum += term;
            }
            libm::pow(s, nu) * libm::pow(2.0, nu / 2.0) * libm::tgamma((nu + 1.0) / 2.0)
                / libm::sqrt(core::f64::consts::PI)
                * libm::exp(-x)
                * sum
        };
        for &(mu, v) in &[(0.0, 1.0), (0.3, 0.2), (-2.0, 1.5), (4.0, 0.5), (-0.7, 3.0), (1e-3, 1e-2)] {
            let q = pow23_expectation(mu, v, 16);
            let o = oracle(mu, v);
            assert!((q - o).abs() < 1e-9, "mu={mu} v={v}: {q} vs {o}");
        }
        assert_eq!(pow23_expectation(-8.0, 0.0, 16), 4.0);
    }

    #[test]
    fn linear_quadrature_matches_closed_form() {
        for seed in 0..6 {
            let t = random_truth(Scenario::AllCorrect, 3, 3, seed);
            for j in 0..3 {
                let c = closed_form_effects(&t, j).unwrap();
                let q = quadrature_effects(&t, j, QuadOrder::COARSE).unwrap();
                assert!(max_gap(&c, &q) < 1e-10, "seed {seed} j {j}");
            }
        }
    }

    #[test]
    fn closed_form_identities() {
        let mut t = chain_truth();
        let th = t.theta_ma();
        let e = closed_form_effects(&t, 1).unwrap();
        assert!((e.dm - t.beta_ym[1] * th[1]).abs() < 1e-14);
        assert!((e.te - e.de - e.ie).abs() < 1e-14);
        for (tm, im) in e.tm_per_dag.iter().zip(&e.im_per_dag) {
            assert!((tm - e.dm - im).abs() < 1e-14);
        }
        t.beta_ma = vec![0.0; 3];
        let z = closed_form_effects(&t, 0).unwrap();
        assert!(z.dm.abs() < 1e-15 && z.im.abs() < 1e-15 && z.ie.abs() < 1e-15);
        assert!((z.te - t.alpha_ya).abs() < 1e-15 && (z.de - t.alpha_ya).abs() < 1e-15);
    }

    #[test]
    fn total_mediation_on_true_dag_is_total_effect_through_mj() {
        // On the true DAG, w_j is the total effect of M_j on Y.
        let t = chain_truth();
        let g = t.dag().unwrap();
        let sigma = t.noise_cov();
        let mut s = vec![0];
        s.extend(g.parents(0));
        let (w, _) = regression_weights(&sigma, &t.beta_ym, &s).unwrap();
        let b = &t.beta_ym;
        let total = b[0] + 0.7 * (b[1] + -0.5 * b[2]);
        assert!((w[0] - total).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_truths_pass_self_check() {
        for sc in [Scenario::M1, Scenario::M2, Scenario::M3, Scenario::ContinuousAll, Scenario::DiscreteAll] {
            let t = random_truth(sc, 3, 3, 21);
            let e = true_effects(&t, t.focus).unwrap();
            assert!(e.error_bound <= QUADRATURE_TOL, "{sc}");
            assert!((e.tm - e.dm - e.im).abs() < 1e-12);
        }
    }

    #[test]
    fn m2_and_m3_keep_linear_mediation_effects() {
        let t = random_truth(Scenario::M2, 3, 3, 4);
        let q = true_effects(&t, t.focus).unwrap();
        let c = closed_form_effects(&t, t.focus).unwrap();
        assert!((q.dm - c.dm).abs() < 1e-10 && (q.im - c.im).abs() < 1e-10);
        let t3 = random_truth(Scenario::M3, 3, 3, 4);
        let q3 = true_effects(&t3, t3.focus).unwrap();
        assert!(q3.dm.abs() < 1e-12);
    }

    #[test]
    fn discrete_truth_against_monte_carlo() {
        let t = random_truth(Scenario::DiscreteAll, 2, 2, 8);
        let e = true_effects(&t, 0).unwrap();
        // TE by simulation from intervened draws.
        let ds1 = gen_scenario(&t, Scenario::DiscreteAll, 200_000, 1).unwrap();
        let mut s = [0.0, 0.0];
        let mut n = [0.0, 0.0];
        // Use propensity weighting with the true propensity.
        for i in 0..ds1.n() {
            let c = ds1.c_row(i);
            let e1 = crate::special::norm_cdf(dot(&t.beta_ac, c));
            let a = ds1.a(i);
            let w = if a == 1.0 { 1.0 / e1 } else { 1.0 / (1.0 - e1) };
            s[a as usize] += w * ds1.y(i);
            n[a as usize] += 1.0;
        }
        let nn = ds1.n() as f64;
        let te_hat = s[1] / nn - s[0] / nn;
        assert!((te_hat - e.te).abs() < 0.05, "{te_hat} vs {}", e.te);
        assert!(n[0] > 0.0 && n[1] > 0.0);
    }

    #[test]
    fn all_correct_moments() {
        let t = random_truth(Scenario::AllCorrect, 3, 3, 2);
        let n = 1_000_000;
        let ds = gen_scenario(&t, Scenario::AllCorrect, n, 3).unwrap();
        // Implied covariance of X = (C, A, M, Y) = L (C, A) + noise.
        let nc = t.n_conf;
        let p = t.p;
        let th_c = t.theta_mc();
        let th_a = t.theta_ma();
        let d = nc + 1 + p + 1;
        let mut load = DMatrix::zeros(d, nc + 1);
        for l in 0..nc {
            load[(l, l)] = 1.0;
        }
        load[(nc, nc)] = 1.0;
        for k in 0..p {
            for l in 0..nc {
                load[(nc + 1 + k, l)] = th_c[(k, l)];
            }
            load[(nc + 1 + k, nc)] = th_a[k];
        }
        for l in 0..=nc {
            let mut v = if l < nc { t.beta_yc[l] } else { t.alpha_ya };
            for k in 0..p {
                v += t.beta_ym[k] * load[(nc + 1 + k, l)];
            }
            load[(d - 1, l)] = v;
        }
        let b2: f64 = t.beta_ac.iter().map(|b| b * b).sum();
        let mut ca = DMatrix::identity(nc + 1, nc + 1);
        for l in 0..nc {
            let cov = t.beta_ac[l] * norm_pdf(0.0) / (1.0 + b2).sqrt();
            ca[(l, nc)] = cov;
            ca[(nc, l)] = cov;
        }
        ca[(nc, nc)] = 0.25;
        let mut implied = &load * ca * load.transpose();
        let sig = t.noise_cov();
        let b = DVector::from_column_slice(&t.beta_ym);
        for k in 0..p {
            for l in 0..p {
                implied[(nc + 1 + k, nc + 1 + l)] += sig[(k, l)];
            }
            let cy = (sig.row(k) * &b)[(0, 0)];
            implied[(nc + 1 + k, d - 1)] += cy;
            implied[(d - 1, nc + 1 + k)] += cy;
        }
        implied[(d - 1, d - 1)] += (b.transpose() * &sig * &b)[(0, 0)] + t.sigma2_y;

        let x = ds.to_matrix();
        let mean = x.row_mean();
        let mut emp = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = x.row(i) - &mean;
            emp += r.transpose() * r;
        }
        emp /= n as f64;
        let scale = implied.diagonal().max();
        for r in 0..d {
            for c in 0..d {
                assert!(
                    (emp[(r, c)] - implied[(r, c)]).abs() < 0.01 * scale,
                    "({r},{c}) {} vs {}",
                    emp[(r, c)],
                    implied[(r, c)]
                );
            }
        }
    }

    #[test]
    fn m0_changes_only_the_exposure() {
        let t = random_truth(Scenario::AllCorrect, 2, 2, 31);
        let n = 400_000;
        let a = gen_scenario(&t, Scenario::AllCorrect, n, 7).unwrap();
        let b = gen_scenario(&t, Scenario::M0, n, 7).unwrap();
        // Probit and logit rates at β = 0 coincide; compare P(A = 1 | βC > 1) instead.
        let rate = |ds: &Dataset| {
            let (mut k, mut m) = (0.0, 0.0);
            for i in 0..ds.n() {
                if dot(&t.beta_ac, ds.c_row(i)) > 0.5 {
                    m += 1.0;
                    k += ds.a(i);
                }
            }
            k / m
        };
        assert!((rate(&a) - rate(&b)).abs() > 0.02);
        let cmean = |ds: &Dataset| ds.c_raw().iter().sum::<f64>() / ds.n() as f64;
        assert!((cmean(&a) - cmean(&b)).abs() < 1e-12);
    }

    #[test]
    fn discrete_mediators_are_binary() {
        let t = random_truth(Scenario::DiscreteAll, 3, 3, 2);
        let ds = gen_scenario(&t, Scenario::DiscreteAll, 500, 1).unwrap();
        assert!(ds.m_raw().iter().all(|&v| v == 0.0 || v == 1.0));
        let c = random_truth(Scenario::ContinuousAll, 3, 3, 2);
        let dc = gen_scenario(&c, Scenario::ContinuousAll, 500, 1).unwrap();
        assert!(dc.c_raw().chunks(2).all(|r| r[0] > 0.0 && (r[1] - 10.0).abs() < 8.0));
    }

    #[test]
    fn refit_recovers_coefficients() {
        let t = random_truth(Scenario::AllCorrect, 3, 3, 12);
        let ds = gen_scenario(&t, Scenario::AllCorrect, 100_000, 5).unwrap();
        let x = ds.design(&[Col::Conf, Col::Exposure, Col::Mediators]);
        let fit = ols_fit(&x, &ds.y_dvec()).unwrap();
        let rss = fit.rss() / (ds.n() - x.ncols()) as f64;
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let mut truth = vec![0.0];
        truth.extend_from_slice(&t.beta_yc);
        truth.push(t.alpha_ya);
        truth.extend_from_slice(&t.beta_ym);
        for (k, tv) in truth.iter().enumerate() {
            let se = (rss * xtx_inv[(k, k)]).sqrt();
            assert!((fit.coefficients[k] - tv).abs() < 5.0 * se, "coef {k}");
        }
    }

    #[test]
    fn oracle_means_match_conditioning() {
        let t = chain_truth();
        let sets = [MeanSet::full(3), MeanSet::ca(), MeanSet::with_parents(1, &[0])];
        let b = oracle_bundle(&t, &sets).unwrap();
        let full = b.mean(&MeanSet::full(3)).unwrap().linear().unwrap().clone();
        assert_eq!(full.coef_m, t.beta_ym);
        assert_eq!(full.coef_c, t.beta_yc);
        assert!((full.coef_a - t.alpha_ya).abs() < 1e-14);
        let ca = b.mean(&MeanSet::ca()).unwrap().linear().unwrap().clone();
        let ie = dot(&t.beta_ym, &t.theta_ma());
        assert!((ca.coef_a - t.alpha_ya - ie).abs() < 1e-14);
    }
}
