//! Quadruply robust estimators of `DM_j`, `TM_j(G)` and the MEC-averaged `IM_j`,
//! the single-model strategies they combine, score variances and the symmetric
//! t-bootstrap.
//!
//! Every inner integral is held as an [`Integral`]: an exact value, or a Monte
//! Carlo mean together with its per-draw contributions. The score algebra is
//! linear in the integrals, so the same combination evaluated draw by draw gives
//! the Monte Carlo error of each per-observation score.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataset::{Col, Dataset};
use crate::effects_ols::{distinct_parent_sets, EffectEstimate, Estimand, Method};
use crate::error::{dim, invalid, Error, Result};
use crate::graph::{enumerate_mec, Cpdag, Dag, MEC_CAP};
use crate::linmodel::{ols_fit, residual_covariance, sub_matrix, GaussianLaw};
use crate::nuisance::{
    fit_propensity, ConditionalLaw, FitOptions, Link, MeanSet, MediatorLaw, NuisanceBundle, OutcomeMean, Propensity,
};
use crate::rng::{derive_seed, sub_rng};
#[allow(unused_imports)]
use crate::special::Sqrt;

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n: 100, seed: 0 }
    }
}

/// Settings shared by the general estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrOptions {
    pub mc: McConfig,
    /// Use Monte Carlo even when every outcome mean is linear.
    pub force_mc: bool,
    /// Drop per-observation corrections larger than `ln n` in absolute value.
    pub truncate: bool,
    pub alpha: f64,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions {
            mc: McConfig::default(),
            force_mc: false,
            truncate: true,
            alpha: 0.05,
        }
    }
}

/// Estimate with the diagnostics of the quadruply robust path.
#[derive(Debug, Clone, PartialEq)]
pub struct QrEstimate {
    pub estimate: EffectEstimate,
    /// Monte Carlo draws per integral, 0 when every integral was exact.
    pub mc_n: usize,
    /// Monte Carlo standard error of the point estimate.
    pub mc_se: f64,
    pub truncation_count: usize,
    pub bootstrap_reps: usize,
    /// `TM_j(G)` per MEC member, for indirect and total effects.
    pub tm_per_dag: Vec<f64>,
    pub im_per_dag: Vec<f64>,
}

/// Per-observation scores `plug_in + correction` of one functional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTerms {
    pub plug_in: Vec<f64>,
    pub correction: Vec<f64>,
    /// Monte Carlo variance of each observation's score.
    pub mc_var: Vec<f64>,
    /// Whether each correction was dropped by truncation.
    pub truncated: Vec<bool>,
}

impl ScoreTerms {
    pub fn len(&self) -> usize {
        self.plug_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plug_in.is_empty()
    }

    /// Plug-in mean plus the mean of the retained corrections.
    pub fn estimate(&self) -> f64 {
        let n = self.len() as f64;
        let mut s = 0.0;
        for i in 0..self.len() {
            s += self.plug_in[i];
            if !self.truncated[i] {
                s += self.correction[i];
            }
        }
        s / n
    }

    /// Retained per-observation scores.
    pub fn scores(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.plug_in[i] + if self.truncated[i] { 0.0 } else { self.correction[i] })
            .collect()
    }

    pub fn truncation_count(&self) -> usize {
        self.truncated.iter().filter(|&&t| t).count()
    }

    pub fn mc_se(&self) -> f64 {
        let n = self.len() as f64;
        (self.mc_var.iter().sum::<f64>() / (n * n)).sqrt()
    }

    fn truncate(&mut self, on: bool) {
        let bound = libm::log(self.len() as f64);
        self.truncated = self.correction.iter().map(|c| on && c.abs() > bound).collect();
    }

    /// `self − other`, observation by observation, with the same truncation flags.
    fn minus(&self, other: &ScoreTerms) -> ScoreTerms {
        ScoreTerms {
            plug_in: zip_with(&self.plug_in, &other.plug_in, |a, b| a - b),
            correction: self
                .correction
                .iter()
                .zip(&self.truncated)
                .zip(other.correction.iter().zip(&other.truncated))
                .map(|((a, ta), (b, tb))| if *ta { 0.0 } else { *a } - if *tb { 0.0 } else { *b })
                .collect(),
            mc_var: Vec::new(),
            truncated: vec![false; self.len()],
        }
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

/// `(1/n²) Σ (score_i − estimate)²`.
pub fn score_variance(scores: &[f64], estimate: f64) -> f64 {
    let n = scores.len() as f64;
    scores.iter().map(|s| (s - estimate) * (s - estimate)).sum::<f64>() / (n * n)
}

/// Inner integral: exact value or Monte Carlo mean with per-draw contributions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Integral {
    pub value: f64,
    pub draws: Vec<f64>,
}

impl Integral {
    fn exact(value: f64) -> Self {
        Integral {
            value,
            draws: Vec::new(),
        }
    }

    fn from_draws(draws: Vec<f64>) -> Self {
        let value = draws.iter().sum::<f64>() / draws.len() as f64;
        Integral { value, draws }
    }

    fn at(&self, l: usize) -> f64 {
        if self.draws.is_empty() {
            self.value
        } else {
            self.draws[l]
        }
    }
}

/// Observation-level quantities shared by all scores.
#[derive(Debug, Clone, Copy)]
struct Obs {
    a: f64,
    y: f64,
    e1: f64,
}

impl Obs {
    /// `1(A = a') / e_{a'}(C)`.
    fn ipw(&self, arm: usize) -> f64 {
        let hit = (self.a == 1.0) == (arm == 1);
        if !hit {
            0.0
        } else if arm == 1 {
            1.0 / self.e1
        } else {
            1.0 / (1.0 - self.e1)
        }
    }
}

const SIGN: [f64; 2] = [-1.0, 1.0];

/// Pieces of the `ζ_j(a', 0, C)` scores, indexed by `a'`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZetaTerms {
    /// `π_{C,a'}(M_j) π_{C,0}(M_{−j}) / π_{C,1}(M)`.
    pub weight: [f64; 2],
    /// `μ(C, 1, M)`.
    pub mu_obs: f64,
    /// `∫ μ(C,1,m_j,M_{−j}) π_{C,a'}(m_j)`.
    pub tau1: [Integral; 2],
    /// `∫ μ(C,1,M_j,m_{−j}) π_{C,0}(m_{−j})`.
    pub tau2: Integral,
    /// `∫ μ(C,1,m) π_{C,a'}(m_j) π_{C,0}(m_{−j})`.
    pub zeta: [Integral; 2],
}

/// Pieces of the `ϱ_j(a', M_j, C; G)` scores for one parent set, indexed by `a'`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarrhoTerms {
    /// `π_C(M_j) / π_{C,a',Pa_j}(M_j)`.
    pub weight: [f64; 2],
    /// `μ(C, a', Pa_j, M_j)` at the observation.
    pub mu_obs: [f64; 2],
    /// `∫ μ(C,a',Pa_j,m_j) π_C(m_j)`.
    pub tau: [Integral; 2],
    /// `∫∫ μ(C,a',pa,m_j) π_{C,a'}(pa) π_C(m_j)`.
    pub expected: [Integral; 2],
    /// `∫ μ(C,a',pa,M_j) π_{C,a'}(pa)`.
    pub varrho: [Integral; 2],
}

/// Prepared nuisance evaluations for one mediator.
pub struct QrContext<'a> {
    ds: &'a Dataset,
    nuis: &'a NuisanceBundle,
    j: usize,
    full: &'a dyn OutcomeMean,
    ca: &'a dyn OutcomeMean,
    exact: bool,
    opts: QrOptions,
    rest: Vec<usize>,
    joint: Box<dyn ConditionalLaw + 'a>,
    marg_j: Box<dyn ConditionalLaw + 'a>,
    marg_rest: Option<Box<dyn ConditionalLaw + 'a>>,
}

impl<'a> QrContext<'a> {
    /// Requires the means on `(C, A, M)` and `(C, A)` in the bundle.
    pub fn new(ds: &'a Dataset, nuis: &'a NuisanceBundle, j: usize, opts: QrOptions) -> Result<Self> {
        let p = ds.p();
        if j >= p {
            return Err(dim("mediator index out of range"));
        }
        if nuis.mediators.dim() != p {
            return Err(dim("mediator law dimension differs from the data"));
        }
        let full = nuis.mean(&MeanSet::full(p))?;
        let ca = nuis.mean(&MeanSet::ca())?;
        let all: Vec<usize> = (0..p).collect();
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let law = nuis.mediators.as_ref();
        let exact = !opts.force_mc && nuis.means.values().all(|m| m.linear().is_some());
        if !exact && opts.mc.n == 0 {
            return Err(invalid("Monte Carlo size must be positive"));
        }
        Ok(QrContext {
            ds,
            nuis,
            j,
            full,
            ca,
            exact,
            opts,
            joint: law.conditional(&all, &[])?,
            marg_j: law.conditional(&[j], &[])?,
            marg_rest: if rest.is_empty() {
                None
            } else {
                Some(law.conditional(&rest, &[])?)
            },
            rest,
        })
    }

    /// Whether the inner integrals are exact.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    fn obs(&self, i: usize) -> Obs {
        Obs {
            a: self.ds.a(i),
            y: self.ds.y(i),
            e1: self.nuis.propensity.e1(self.ds.c_row(i)),
        }
    }

    fn law(&self) -> &dyn MediatorLaw {
        self.nuis.mediators.as_ref()
    }

    fn means(&self, c: &[f64]) -> [Vec<f64>; 2] {
        let p = self.ds.p();
        let mut m0 = vec![0.0; p];
        let mut m1 = vec![0.0; p];
        self.law().mean(c, 0.0, &mut m0);
        self.law().mean(c, 1.0, &mut m1);
        [m0, m1]
    }

    /// Uncentered `κ(a', C)` score: `1(A=a')/e (Y − κ) + κ`.
    pub fn score_kappa(&self, i: usize, arm: usize) -> f64 {
        let o = self.obs(i);
        let k = self.ca.eval(self.ds.c_row(i), arm as f64, self.ds.m_row(i));
        o.ipw(arm) * (o.y - k) + k
    }

    /// Inner pieces of the `ζ_j` scores at observation `i`.
    pub fn zeta_terms(&self, i: usize) -> Result<ZetaTerms> {
        let c = self.ds.c_row(i);
        let m = self.ds.m_row(i);
        let j = self.j;
        let p = self.ds.p();
        let mj = [m[j]];
        let m_rest: Vec<f64> = self.rest.iter().map(|&k| m[k]).collect();

        let d_joint1 = self.joint.density(c, 1.0, m, &[]);
        let d_rest0 = self.marg_rest.as_ref().map_or(1.0, |l| l.density(c, 0.0, &m_rest, &[]));
        let mut weight = [0.0; 2];
        for (arm, w) in weight.iter_mut().enumerate() {
            let d_j = self.marg_j.density(c, arm as f64, &mj, &[]);
            *w = d_j * d_rest0 / d_joint1;
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("density ratio overflow (positivity violation?)".into()));
        }
        let mu_obs = self.full.eval(c, 1.0, m);

        if self.exact {
            let means = self.means(c);
            let mut tau1: [Integral; 2] = Default::default();
            let mut zeta: [Integral; 2] = Default::default();
            let mut v = m.to_vec();
            for arm in 0..2 {
                v.copy_from_slice(m);
                v[j] = means[arm][j];
                tau1[arm] = Integral::exact(self.full.eval(c, 1.0, &v));
                for &k in &self.rest {
                    v[k] = means[0][k];
                }
                zeta[arm] = Integral::exact(self.full.eval(c, 1.0, &v));
            }
            v.copy_from_slice(m);
            for &k in &self.rest {
                v[k] = means[0][k];
            }
            let tau2 = Integral::exact(self.full.eval(c, 1.0, &v));
            return Ok(ZetaTerms {
                weight,
                mu_obs,
                tau1,
                tau2,
                zeta,
            });
        }

        let n = self.opts.mc.n;
        let mut r = sub_rng(derive_seed(self.opts.mc.seed, 0x7a65_7461 ^ j as u64), i as u64);
        let mut draw = vec![0.0; p];
        let mut z: [Vec<f64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut rest_buf = vec![0.0; self.rest.len()];
        for _ in 0..n {
            self.joint.sample(c, 1.0, &[], &mut r, &mut draw);
            let base = self.joint.density(c, 1.0, &draw, &[]);
            for (k, &q) in self.rest.iter().enumerate() {
                rest_buf[k] = draw[q];
            }
            let d_rest = self.marg_rest.as_ref().map_or(1.0, |l| l.density(c, 0.0, &rest_buf, &[]));
            let mu = self.full.eval(c, 1.0, &draw);
            for (arm, zs) in z.iter_mut().enumerate() {
                let w = self.marg_j.density(c, arm as f64, &draw[j..=j], &[]) * d_rest / base;
                zs.push(w * mu);
            }
        }
        let mut tau1: [Integral; 2] = Default::default();
        let mut v = m.to_vec();
        let mut one = [0.0];
        for (arm, t) in tau1.iter_mut().enumerate() {
            let mut d = Vec::with_capacity(n);
            for _ in 0..n {
                self.marg_j.sample(c, arm as f64, &[], &mut r, &mut one);
                v[j] = one[0];
                d.push(self.full.eval(c, 1.0, &v));
            }
            *t = Integral::from_draws(d);
        }
        v.copy_from_slice(m);
        let tau2 = match &self.marg_rest {
            None => Integral::exact(self.full.eval(c, 1.0, m)),
            Some(l) => {
                let mut d = Vec::with_capacity(n);
                for _ in 0..n {
                    l.sample(c, 0.0, &[], &mut r, &mut rest_buf);
                    for (k, &q) in self.rest.iter().enumerate() {
                        v[q] = rest_buf[k];
                    }
                    d.push(self.full.eval(c, 1.0, &v));
                }
                Integral::from_draws(d)
            }
        };
        let [z0, z1] = z;
        Ok(ZetaTerms {
            weight,
            mu_obs,
            tau1,
            tau2,
            zeta: [Integral::from_draws(z0), Integral::from_draws(z1)],
        })
    }

    /// Uncentered `ζ_j(a', 0, C)` score at observation `i`.
    pub fn score_zeta(&self, i: usize, arm: usize) -> Result<f64> {
        let z = self.zeta_terms(i)?;
        let o = self.obs(i);
        Ok(zeta_score(&o, &z, arm, &|g: &Integral| g.value))
    }

    /// Inner pieces of the `ϱ_j` scores for parent set `pa` at observation `i`.
    /// Needs the mean on `(C, A, Pa_j, M_j)` in the bundle.
    pub fn varrho_terms(&self, i: usize, pa: &[usize], prepared: &PreparedParents<'_>) -> Result<VarrhoTerms> {
        let c = self.ds.c_row(i);
        let m = self.ds.m_row(i);
        let j = self.j;
        let mu_s = prepared.mean;
        let o = self.obs(i);
        let e = [1.0 - o.e1, o.e1];
        let mj = [m[j]];
        let pa_obs: Vec<f64> = pa.iter().map(|&k| m[k]).collect();

        let mix = e[0] * self.marg_j.density(c, 0.0, &mj, &[]) + e[1] * self.marg_j.density(c, 1.0, &mj, &[]);
        let mut weight = [0.0; 2];
        let mut mu_obs = [0.0; 2];
        for arm in 0..2 {
            let d = prepared.j_given_pa.density(c, arm as f64, &mj, &pa_obs);
            weight[arm] = mix / d;
            mu_obs[arm] = mu_s.eval(c, arm as f64, m);
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("density ratio overflow (positivity violation?)".into()));
        }

        let mut out = VarrhoTerms {
            weight,
            mu_obs,
            ..Default::default()
        };
        let mut v = m.to_vec();
        if self.exact {
            let means = self.means(c);
            let mix_mean = e[0] * means[0][j] + e[1] * means[1][j];
            for arm in 0..2 {
                let a = arm as f64;
                v.copy_from_slice(m);
                v[j] = mix_mean;
                out.tau[arm] = Integral::exact(mu_s.eval(c, a, &v));
                for &k in pa {
                    v[k] = means[arm][k];
                }
                out.expected[arm] = Integral::exact(mu_s.eval(c, a, &v));
                v[j] = m[j];
                out.varrho[arm] = Integral::exact(mu_s.eval(c, a, &v));
            }
            return Ok(out);
        }

        let n = self.opts.mc.n;
        let key = pa.iter().fold(1u64 << 63, |acc, &k| acc | (1u64 << (k % 63)));
        let mut r = sub_rng(derive_seed(self.opts.mc.seed, key ^ ((j as u64) << 40)), i as u64);
        let mut one = [0.0];
        let mut pa_buf = vec![0.0; pa.len()];
        for arm in 0..2 {
            let a = arm as f64;
            // m_j from the mixture π_C.
            let mut mj_draws = Vec::with_capacity(n);
            for _ in 0..n {
                let star = if r.random::<f64>() < o.e1 { 1.0 } else { 0.0 };
                self.marg_j.sample(c, star, &[], &mut r, &mut one);
                mj_draws.push(one[0]);
            }
            v.copy_from_slice(m);
            let tau: Vec<f64> = mj_draws
                .iter()
                .map(|&x| {
                    v[j] = x;
                    mu_s.eval(c, a, &v)
                })
                .collect();
            if pa.is_empty() {
                out.varrho[arm] = Integral::exact(mu_obs[arm]);
                out.expected[arm] = Integral::from_draws(tau.clone());
                out.tau[arm] = Integral::from_draws(tau);
                continue;
            }
            let pa_law = prepared.pa_marginal.as_ref().expect("non-empty parent set");
            let mut pa_draws = vec![0.0; n * pa.len()];
            for l in 0..n {
                pa_law.sample(c, a, &[], &mut r, &mut pa_buf);
                pa_draws[l * pa.len()..(l + 1) * pa.len()].copy_from_slice(&pa_buf);
            }
            v.copy_from_slice(m);
            let varrho: Vec<f64> = (0..n)
                .map(|l| {
                    for (q, &k) in pa.iter().enumerate() {
                        v[k] = pa_draws[l * pa.len() + q];
                    }
                    mu_s.eval(c, a, &v)
                })
                .collect();
            let expected = if mu_s.linear().is_some() {
                // Additive in (pa, m_j): the double mean factorizes.
                let mut pa_bar = vec![0.0; pa.len()];
                for l in 0..n {
                    for q in 0..pa.len() {
                        pa_bar[q] += pa_draws[l * pa.len() + q] / n as f64;
                    }
                }
                let mj_bar = mj_draws.iter().sum::<f64>() / n as f64;
                v.copy_from_slice(m);
                for (q, &k) in pa.iter().enumerate() {
                    v[k] = pa_bar[q];
                }
                let mut row = Vec::with_capacity(n);
                let mut col = Vec::with_capacity(n);
                v[j] = mj_bar;
                let centre = mu_s.eval(c, a, &v);
                for l in 0..n {
                    for (q, &k) in pa.iter().enumerate() {
                        v[k] = pa_draws[l * pa.len() + q];
                    }
                    v[j] = mj_bar;
                    row.push(mu_s.eval(c, a, &v));
                    for (q, &k) in pa.iter().enumerate() {
                        v[k] = pa_bar[q];
                    }
                    v[j] = mj_draws[l];
                    col.push(mu_s.eval(c, a, &v));
                }
                Integral {
                    value: centre,
                    draws: (0..n).map(|l| row[l] + col[l] - centre).collect(),
                }
            } else {
                let mut grid = vec![0.0; n * n];
                for l in 0..n {
                    for (q, &k) in pa.iter().enumerate() {
                        v[k] = pa_draws[l * pa.len() + q];
                    }
                    for (s, &x) in mj_draws.iter().enumerate() {
                        v[j] = x;
                        grid[l * n + s] = mu_s.eval(c, a, &v);
                    }
                }
                let total = grid.iter().sum::<f64>() / (n * n) as f64;
                let draws = (0..n)
                    .map(|l| {
                        let row = grid[l * n..(l + 1) * n].iter().sum::<f64>() / n as f64;
                        let col = (0..n).map(|s| grid[s * n + l]).sum::<f64>() / n as f64;
                        row + col - total
                    })
                    .collect();
                Integral { value: total, draws }
            };
            out.tau[arm] = Integral::from_draws(tau);
            out.varrho[arm] = Integral::from_draws(varrho);
            out.expected[arm] = expected;
        }
        Ok(out)
    }

    /// Prepares the conditional laws needed for parent set `pa`.
    pub fn prepare_parents(&self, pa: &[usize]) -> Result<PreparedParents<'_>> {
        if pa.contains(&self.j) || pa.iter().any(|&k| k >= self.ds.p()) {
            return Err(dim("invalid parent set"));
        }
        let set = MeanSet::with_parents(self.j, pa);
        Ok(PreparedParents {
            mean: self.nuis.mean(&set)?,
            j_given_pa: self.law().conditional(&[self.j], pa)?,
            pa_marginal: if pa.is_empty() {
                None
            } else {
                Some(self.law().conditional(pa, &[])?)
            },
        })
    }

    /// Uncentered `ϱ_j(a', M_j, C; G)` score at observation `i`.
    pub fn score_varrho(&self, i: usize, arm: usize, pa: &[usize]) -> Result<f64> {
        let prepared = self.prepare_parents(pa)?;
        let t = self.varrho_terms(i, pa, &prepared)?;
        let o = self.obs(i);
        Ok(varrho_score(&o, &t, arm, &|g: &Integral| g.value))
    }
}

/// Conditional laws and mean for one parent set.
pub struct PreparedParents<'a> {
    mean: &'a dyn OutcomeMean,
    j_given_pa: Box<dyn ConditionalLaw + 'a>,
    pa_marginal: Option<Box<dyn ConditionalLaw + 'a>>,
}

type Get<'g> = dyn Fn(&Integral) -> f64 + 'g;

fn zeta_score(o: &Obs, z: &ZetaTerms, arm: usize, g: &Get<'_>) -> f64 {
    let zeta = g(&z.zeta[arm]);
    o.ipw(1) * z.weight[arm] * (o.y - z.mu_obs) + o.ipw(0) * (g(&z.tau1[arm]) - zeta) + o.ipw(arm) * (g(&z.tau2) - zeta) + zeta
}

fn varrho_score(o: &Obs, t: &VarrhoTerms, arm: usize, g: &Get<'_>) -> f64 {
    o.ipw(arm) * t.weight[arm] * (o.y - t.mu_obs[arm]) + o.ipw(arm) * (g(&t.tau[arm]) - g(&t.expected[arm])) + g(&t.varrho[arm])
}

/// `(plug-in, correction)` of the DM score.
fn dm_parts(o: &Obs, z: &ZetaTerms, g: &Get<'_>) -> (f64, f64) {
    let mut plug = 0.0;
    let mut total = 0.0;
    for arm in 0..2 {
        plug += SIGN[arm] * g(&z.zeta[arm]);
        total += SIGN[arm] * zeta_score(o, z, arm, g);
    }
    (plug, total - plug)
}

/// `(plug-in, correction)` of the TM score for one parent set.
fn tm_parts(o: &Obs, kappa: [f64; 2], t: &VarrhoTerms, g: &Get<'_>) -> (f64, f64) {
    let mut plug = 0.0;
    let mut total = 0.0;
    for arm in 0..2 {
        plug += SIGN[arm] * (kappa[arm] - g(&t.varrho[arm]));
        total += SIGN[arm] * (o.ipw(arm) * (o.y - kappa[arm]) + kappa[arm] - varrho_score(o, t, arm, g));
    }
    (plug, total - plug)
}

fn mc_count(z: &ZetaTerms, ts: &[VarrhoTerms]) -> usize {
    let mut n = z.zeta[0].draws.len().max(z.tau1[0].draws.len()).max(z.tau2.draws.len());
    for t in ts {
        for arm in 0..2 {
            n = n.max(t.tau[arm].draws.len()).max(t.expected[arm].draws.len()).max(t.varrho[arm].draws.len());
        }
    }
    n
}

fn mc_var_of(n: usize, f: impl Fn(&Get<'_>) -> f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let vals: Vec<f64> = (0..n).map(|l| f(&|g: &Integral| g.at(l))).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ((n - 1) as f64 * n as f64)
}

/// All per-observation pieces for mediator `j` over the given parent sets.
pub struct QrPieces {
    obs: Vec<Obs>,
    kappa: Vec<[f64; 2]>,
    zeta: Vec<ZetaTerms>,
    /// `varrho[r][i]` for distinct parent set `r`.
    varrho: Vec<Vec<VarrhoTerms>>,
    pub parent_sets: Vec<Vec<usize>>,
    exact: bool,
    mc_n: usize,
}

impl QrPieces {
    /// Evaluates every inner integral for all observations.
    pub fn compute(ds: &Dataset, nuis: &NuisanceBundle, j: usize, parent_sets: &[Vec<usize>], opts: QrOptions) -> Result<Self> {
        let ctx = QrContext::new(ds, nuis, j, opts)?;
        let n = ds.n();
        let mut obs = Vec::with_capacity(n);
        let mut kappa = Vec::with_capacity(n);
        let mut zeta = Vec::with_capacity(n);
        for i in 0..n {
            obs.push(ctx.obs(i));
            let c = ds.c_row(i);
            kappa.push([ctx.ca.eval(c, 0.0, ds.m_row(i)), ctx.ca.eval(c, 1.0, ds.m_row(i))]);
            zeta.push(ctx.zeta_terms(i)?);
        }
        let mut varrho = Vec::with_capacity(parent_sets.len());
        for pa in parent_sets {
            let prepared = ctx.prepare_parents(pa)?;
            let mut v = Vec::with_capacity(n);
            for i in 0..n {
                v.push(ctx.varrho_terms(i, pa, &prepared)?);
            }
            varrho.push(v);
        }
        Ok(QrPieces {
            obs,
            kappa,
            zeta,
            varrho,
            parent_sets: parent_sets.to_vec(),
            exact: ctx.exact,
            mc_n: if ctx.exact { 0 } else { opts.mc.n },
        })
    }

    pub fn n(&self) -> usize {
        self.obs.len()
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// DM score terms.
    pub fn dm_terms(&self, truncate: bool) -> ScoreTerms {
        let n = self.n();
        let mut s = ScoreTerms::default();
        for i in 0..n {
            let (p, c) = dm_parts(&self.obs[i], &self.zeta[i], &|g: &Integral| g.value);
            s.plug_in.push(p);
            s.correction.push(c);
            let k = mc_count(&self.zeta[i], &[]);
            s.mc_var.push(mc_var_of(k, |g| {
                let (p, c) = dm_parts(&self.obs[i], &self.zeta[i], g);
                p + c
            }));
        }
        s.truncate(truncate);
        s
    }

    /// TM score terms for distinct parent set `r`.
    pub fn tm_terms(&self, r: usize, truncate: bool) -> ScoreTerms {
        let n = self.n();
        let mut s = ScoreTerms::default();
        for i in 0..n {
            let t = &self.varrho[r][i];
            let (p, c) = tm_parts(&self.obs[i], self.kappa[i], t, &|g: &Integral| g.value);
            s.plug_in.push(p);
            s.correction.push(c);
            let k = mc_count(&ZetaTerms::default(), core::slice::from_ref(t));
            s.mc_var.push(mc_var_of(k, |g| {
                let (p, c) = tm_parts(&self.obs[i], self.kappa[i], t, g);
                p + c
            }));
        }
        s.truncate(truncate);
        s
    }

    /// Monte Carlo variance of each observation's averaged-IM score, with
    /// parent-set shares `w[r]`.
    fn im_mc_var(&self, shares: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let ts: Vec<VarrhoTerms> = self.varrho.iter().map(|v| v[i].clone()).collect();
                let k = mc_count(&self.zeta[i], &ts);
                mc_var_of(k, |g| {
                    let (p, c) = dm_parts(&self.obs[i], &self.zeta[i], g);
                    let mut tm = 0.0;
                    for (r, t) in ts.iter().enumerate() {
                        let (tp, tc) = tm_parts(&self.obs[i], self.kappa[i], t, g);
                        tm += shares[r] * (tp + tc);
                    }
                    tm - p - c
                })
            })
            .collect()
    }

    /// Single-strategy per-observation DM values.
    pub fn dm_strategy(&self, method: Method) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let o = &self.obs[i];
            let z = &self.zeta[i];
            let mut v = 0.0;
            for arm in 0..2 {
                v += SIGN[arm]
                    * match method {
                        Method::M0 => z.zeta[arm].value,
                        Method::M1 => o.ipw(1) * z.weight[arm] * o.y,
                        Method::M2 => o.ipw(0) * z.tau1[arm].value,
                        Method::M3 => o.ipw(arm) * z.tau2.value,
                        _ => return Err(invalid("not a single-model strategy")),
                    };
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Single-strategy per-observation TM values for parent set `r`.
    pub fn tm_strategy(&self, r: usize, method: Method) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let o = &self.obs[i];
            let t = &self.varrho[r][i];
            let mut v = 0.0;
            for arm in 0..2 {
                let kappa_ipw = o.ipw(arm) * o.y;
                v += SIGN[arm]
                    * match method {
                        Method::M0 => self.kappa[i][arm] - t.varrho[arm].value,
                        Method::M1 => kappa_ipw - o.ipw(arm) * t.weight[arm] * o.y,
                        Method::M2 => kappa_ipw - o.ipw(arm) * t.tau[arm].value,
                        Method::M3 => kappa_ipw - t.expected[arm].value,
                        _ => return Err(invalid("not a single-model strategy")),
                    };
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Outcome-mean conditioning sets needed for mediator `j` over the parent sets.
pub fn required_mean_sets(p: usize, j: usize, parent_sets: &[Vec<usize>]) -> Vec<MeanSet> {
    let mut v = vec![MeanSet::full(p), MeanSet::ca()];
    for pa in parent_sets {
        let s = MeanSet::with_parents(j, pa);
        if !v.contains(&s) {
            v.push(s);
        }
    }
    v
}

/// Fits a bundle carrying every mean the estimators need for `j` over `mec`.
pub fn fit_bundle_for(ds: &Dataset, options: FitOptions, j: usize, mec: &[Dag]) -> Result<NuisanceBundle> {
    let sets: Vec<Vec<usize>> = distinct_parent_sets(mec, j).into_iter().map(|s| s.0).collect();
    NuisanceBundle::fit(ds, options, &required_mean_sets(ds.p(), j, &sets))
}

/// Estimates of one mediator's effects by the quadruply robust path.
#[derive(Debug, Clone, PartialEq)]
pub struct QrResult {
    pub dm: QrEstimate,
    pub im: QrEstimate,
    pub tm: QrEstimate,
}

fn wrap(estimand: Estimand, j: usize, terms: &ScoreTerms, mc_n: usize, mc_se: f64, alpha: f64) -> QrEstimate {
    let est = terms.estimate();
    let se = score_variance(&terms.scores(), est).sqrt();
    QrEstimate {
        estimate: EffectEstimate::wald(estimand, Some(j), est, se, alpha, Method::Qr),
        mc_n,
        mc_se,
        truncation_count: terms.truncation_count(),
        bootstrap_reps: 0,
        tm_per_dag: Vec::new(),
        im_per_dag: Vec::new(),
    }
}

/// `DM_j`, `TM_j` and `IM_j`, averaged over `mec`, from precomputed pieces.
pub fn qr_from_pieces(pieces: &QrPieces, j: usize, mec: &[Dag], truncate: bool, alpha: f64) -> Result<QrResult> {
    if mec.is_empty() {
        return Err(invalid("empty equivalence class"));
    }
    let n = pieces.n();
    let dm_terms = pieces.dm_terms(truncate);
    let dm_est = dm_terms.estimate();
    let index: BTreeMap<&[usize], usize> =
        pieces.parent_sets.iter().enumerate().map(|(r, s)| (s.as_slice(), r)).collect();
    let tm_terms: Vec<ScoreTerms> = (0..pieces.parent_sets.len()).map(|r| pieces.tm_terms(r, truncate)).collect();
    let tm_est: Vec<f64> = tm_terms.iter().map(|t| t.estimate()).collect();

    let mut shares = vec![0.0; pieces.parent_sets.len()];
    let mut tm_per_dag = Vec::with_capacity(mec.len());
    for g in mec {
        let pa = g.parents(j);
        let r = *index
            .get(pa.as_slice())
            .ok_or_else(|| invalid("parent set missing from the computed pieces"))?;
        shares[r] += 1.0 / mec.len() as f64;
        tm_per_dag.push(tm_est[r]);
    }
    let im_per_dag: Vec<f64> = tm_per_dag.iter().map(|t| t - dm_est).collect();

    // Averaged TM and IM scores, observation by observation.
    let mut tm_avg = ScoreTerms {
        plug_in: vec![0.0; n],
        correction: vec![0.0; n],
        mc_var: Vec::new(),
        truncated: vec![false; n],
    };
    for (r, t) in tm_terms.iter().enumerate() {
        if shares[r] == 0.0 {
            continue;
        }
        for i in 0..n {
            tm_avg.plug_in[i] += shares[r] * t.plug_in[i];
            if !t.truncated[i] {
                tm_avg.correction[i] += shares[r] * t.correction[i];
            }
        }
    }
    let im_terms = tm_avg.minus(&dm_terms);
    let trunc_tm: usize = tm_terms
        .iter()
        .zip(&shares)
        .filter(|(_, s)| **s > 0.0)
        .map(|(t, _)| t.truncation_count())
        .sum();

    let mc_n = pieces.mc_n;
    let dm_mc = if pieces.exact { 0.0 } else { dm_terms.mc_se() };
    let (tm_mc, im_mc) = if pieces.exact {
        (0.0, 0.0)
    } else {
        let nn = (n * n) as f64;
        let im_var = pieces.im_mc_var(&shares);
        let mut tm_var = vec![0.0; n];
        for i in 0..n {
            let ts: Vec<VarrhoTerms> = pieces.varrho.iter().map(|v| v[i].clone()).collect();
            let k = mc_count(&ZetaTerms::default(), &ts);
            tm_var[i] = mc_var_of(k, |g| {
                let mut tm = 0.0;
                for (r, t) in ts.iter().enumerate() {
                    let (tp, tc) = tm_parts(&pieces.obs[i], pieces.kappa[i], t, g);
                    tm += shares[r] * (tp + tc);
                }
                tm
            });
        }
        ((tm_var.iter().sum::<f64>() / nn).sqrt(), (im_var.iter().sum::<f64>() / nn).sqrt())
    };

    let dm = wrap(Estimand::DM, j, &dm_terms, mc_n, dm_mc, alpha);
    let mut tm = wrap(Estimand::TM, j, &tm_avg, mc_n, tm_mc, alpha);
    tm.truncation_count = trunc_tm;
    let mut im = wrap(Estimand::IM, j, &im_terms, mc_n, im_mc, alpha);
    // The averaged IM equals the mean over members of TM(G) − DM exactly.
    let avg_im = im_per_dag.iter().sum::<f64>() / mec.len() as f64;
    im.estimate = EffectEstimate::wald(Estimand::IM, Some(j), avg_im, im.estimate.se, alpha, Method::Qr);
    im.truncation_count = trunc_tm + dm.truncation_count;
    let avg_tm = tm_per_dag.iter().sum::<f64>() / mec.len() as f64;
    tm.estimate = EffectEstimate::wald(Estimand::TM, Some(j), avg_tm, tm.estimate.se, alpha, Method::Qr);
    im.tm_per_dag = tm_per_dag.clone();
    im.im_per_dag = im_per_dag.clone();
    tm.tm_per_dag = tm_per_dag;
    tm.im_per_dag = im_per_dag;
    Ok(QrResult { dm, im, tm })
}

/// Quadruply robust estimates for mediator `j` over explicit mediator DAGs.
pub fn qr_over(ds: &Dataset, nuis: &NuisanceBundle, j: usize, mec: &[Dag], opts: QrOptions) -> Result<QrResult> {
    check_mec(ds, mec)?;
    let sets: Vec<Vec<usize>> = distinct_parent_sets(mec, j).into_iter().map(|s| s.0).collect();
    let pieces = QrPieces::compute(ds, nuis, j, &sets, opts)?;
    qr_from_pieces(&pieces, j, mec, opts.truncate, opts.alpha)
}

fn check_mec(ds: &Dataset, mec: &[Dag]) -> Result<()> {
    if mec.is_empty() {
        return Err(invalid("empty equivalence class"));
    }
    if mec.iter().any(|g| g.d() != ds.p()) {
        return Err(dim("mediator graph size differs from p"));
    }
    Ok(())
}

/// Quadruply robust `DM_j`.
pub fn qr_dm(ds: &Dataset, nuis: &NuisanceBundle, j: usize, opts: QrOptions) -> Result<QrEstimate> {
    let pieces = QrPieces::compute(ds, nuis, j, &[], opts)?;
    let terms = pieces.dm_terms(opts.truncate);
    let mc = if pieces.exact { 0.0 } else { terms.mc_se() };
    Ok(wrap(Estimand::DM, j, &terms, pieces.mc_n, mc, opts.alpha))
}

/// Quadruply robust `TM_j(G)` for one mediator DAG.
pub fn qr_tm(ds: &Dataset, nuis: &NuisanceBundle, j: usize, dag: &Dag, opts: QrOptions) -> Result<QrEstimate> {
    check_mec(ds, core::slice::from_ref(dag))?;
    let pa = dag.parents(j);
    let pieces = QrPieces::compute(ds, nuis, j, &[pa], opts)?;
    let terms = pieces.tm_terms(0, opts.truncate);
    let mc = if pieces.exact { 0.0 } else { terms.mc_se() };
    let mut e = wrap(Estimand::TM, j, &terms, pieces.mc_n, mc, opts.alpha);
    e.tm_per_dag = vec![e.estimate.point];
    Ok(e)
}

/// Quadruply robust `IM_j` averaged over the equivalence class of `cpdag_m`.
pub fn qr_im_avg(ds: &Dataset, nuis: &NuisanceBundle, cpdag_m: &Cpdag, j: usize, opts: QrOptions) -> Result<QrEstimate> {
    let mec = enumerate_mec(cpdag_m, MEC_CAP)?;
    Ok(qr_over(ds, nuis, j, &mec, opts)?.im)
}

/// `DM_j` and averaged `IM_j` by a single-model strategy `M0`–`M3`.
pub fn strategy_over(
    ds: &Dataset,
    nuis: &NuisanceBundle,
    j: usize,
    mec: &[Dag],
    method: Method,
    opts: QrOptions,
) -> Result<(EffectEstimate, EffectEstimate)> {
    check_mec(ds, mec)?;
    let sets: Vec<Vec<usize>> = distinct_parent_sets(mec, j).into_iter().map(|s| s.0).collect();
    let pieces = QrPieces::compute(ds, nuis, j, &sets, opts)?;
    strategy_from_pieces(&pieces, j, mec, method, opts.alpha)
}

/// As [`strategy_over`] from precomputed pieces.
pub fn strategy_from_pieces(
    pieces: &QrPieces,
    j: usize,
    mec: &[Dag],
    method: Method,
    alpha: f64,
) -> Result<(EffectEstimate, EffectEstimate)> {
    let dm = pieces.dm_strategy(method)?;
    let n = dm.len();
    let mut im = vec![0.0; n];
    for g in mec {
        let pa = g.parents(j);
        let r = pieces
            .parent_sets
            .iter()
            .position(|s| *s == pa)
            .ok_or_else(|| invalid("parent set missing from the computed pieces"))?;
        let tm = pieces.tm_strategy(r, method)?;
        for i in 0..n {
            im[i] += tm[i] / mec.len() as f64;
        }
    }
    for i in 0..n {
        im[i] -= dm[i];
    }
    let mk = |estimand, v: &[f64]| {
        let est = v.iter().sum::<f64>() / n as f64;
        EffectEstimate::wald(estimand, Some(j), est, score_variance(v, est).sqrt(), alpha, method)
    };
    Ok((mk(Estimand::DM, &dm), mk(Estimand::IM, &im)))
}

/// Fast closed-form quadruply robust estimates from Gaussian-linear fits:
/// a probit propensity, OLS of M on (1, C, A) with Gaussian errors, and OLS
/// outcome regressions. No Monte Carlo.
pub fn fast_qr(ds: &Dataset, j: usize, cpdag_m: &Cpdag, alpha: f64, truncate: bool) -> Result<(QrEstimate, QrEstimate)> {
    let mec = enumerate_mec(cpdag_m, MEC_CAP)?;
    fast_qr_over(ds, j, &mec, alpha, truncate, 0.01)
}

/// As [`fast_qr`] for explicit mediator DAGs and propensity clip.
pub fn fast_qr_over(ds: &Dataset, j: usize, mec: &[Dag], alpha: f64, truncate: bool, clip: f64) -> Result<(QrEstimate, QrEstimate)> {
    check_mec(ds, mec)?;
    let (n, p, t1) = (ds.n(), ds.p(), ds.n_conf());
    if j >= p {
        return Err(dim("mediator index out of range"));
    }
    let e = fit_propensity(ds, Link::Probit, clip)?;
    let e1: Vec<f64> = (0..n).map(|i| e.e1(ds.c_row(i))).collect();

    // M = Θ (1, C, A) + e_M.
    let xm = ds.design(&[Col::Conf, Col::Exposure]);
    let mm = DMatrix::from_row_slice(n, p, ds.m_raw());
    let mut theta = DMatrix::<f64>::zeros(t1 + 2, p);
    let mut res = DMatrix::<f64>::zeros(n, p);
    for k in 0..p {
        let col = mm.column(k).clone_owned();
        let mean = col.mean();
        if col.iter().all(|v| *v == mean) {
            return Err(Error::Validation(format!("mediator {k} has zero variance")));
        }
        let f = ols_fit(&xm, &col)?;
        theta.set_column(k, &f.coefficients);
        res.set_column(k, &f.residuals);
    }
    let cov = residual_covariance(&res, t1 + 2);
    let th_a = theta.row(t1 + 1).transpose();
    // Mediator means at A = 0 for every row; the A = 1 means add θ_A.
    let mut x0 = xm.clone();
    x0.column_mut(t1 + 1).fill(0.0);
    let mean0 = &x0 * &theta;

    // Y = b (1, C, A, M) + ε and Y = g (1, C, A) + r.
    let xy = ds.design(&[Col::Conf, Col::Exposure, Col::Mediators]);
    let y = ds.y_dvec();
    let b = ols_fit(&xy, &y)?.coefficients;
    let g_ca = ols_fit(&xm, &y)?.coefficients;
    let b_m = b.rows(t1 + 2, p).clone_owned();
    let fitted_full = &xy * &b;
    let mu_ca0 = &x0 * &g_ca;
    let g_a = g_ca[t1 + 1];

    // Densities under N(mean, Σ): marginal of j, of −j, and the joint.
    let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let all: Vec<usize> = (0..p).collect();
    let lj = GaussianLaw::new(DVector::zeros(1), sub_matrix(&cov, &[j], &[j]))?;
    let lall = GaussianLaw::new(DVector::zeros(p), cov.clone())?;
    let lrest = if rest.is_empty() {
        None
    } else {
        Some(GaussianLaw::new(DVector::zeros(rest.len()), sub_matrix(&cov, &rest, &rest))?)
    };
    let dens = |law: &GaussianLaw, idx: &[usize], i: usize, arm: usize| -> Result<f64> {
        let x: Vec<f64> = idx
            .iter()
            .map(|&k| mm[(i, k)] - mean0[(i, k)] - if arm == 1 { th_a[k] } else { 0.0 })
            .collect();
        law.density(&x)
    };

    let ln_n = libm::log(n as f64);
    let ipw = |i: usize, arm: usize| -> f64 {
        let a = ds.a(i);
        match (arm, a == 1.0) {
            (1, true) => 1.0 / e1[i],
            (0, false) => 1.0 / (1.0 - e1[i]),
            _ => 0.0,
        }
    };

    // DM: plug-in β_j θ_j; correction from the closed-form integrals.
    let dm_plug = b_m[j] * th_a[j];
    let mut dm_corr = vec![0.0; n];
    for i in 0..n {
        let d1 = dens(&lall, &all, i, 1)?;
        let d_rest0 = match &lrest {
            Some(l) => dens(l, &rest, i, 0)?,
            None => 1.0,
        };
        let resid = y[i] - (fitted_full[i] + b[t1 + 1] * (1.0 - ds.a(i)));
        let mut c = 0.0;
        for arm in 0..2 {
            let dj = dens(&lj, &[j], i, arm)?;
            let w = dj * d_rest0 / d1;
            let shift_j = if arm == 1 { th_a[j] } else { 0.0 };
            // ζ(a') − τ1(a') and ζ(a') − τ2 differ only through the centred mediators.
            let rest_dev: f64 = rest.iter().map(|&k| b_m[k] * (mm[(i, k)] - mean0[(i, k)])).sum();
            let j_dev = b_m[j] * (mm[(i, j)] - mean0[(i, j)] - shift_j);
            c += SIGN[arm] * (ipw(i, 1) * w * resid + ipw(i, 0) * rest_dev + ipw(i, arm) * j_dev);
        }
        if !c.is_finite() {
            return Err(Error::Numerical("density ratio overflow (positivity violation?)".into()));
        }
        dm_corr[i] = c;
    }

    // TM per distinct parent set.
    let sets = distinct_parent_sets(mec, j);
    let mut tm_terms = Vec::with_capacity(sets.len());
    for (pa, _) in &sets {
        let mut cols: Vec<Col> = vec![Col::Conf, Col::Exposure];
        cols.extend(pa.iter().map(|&k| Col::Mediator(k)));
        cols.push(Col::Mediator(j));
        let xs = ds.design(&cols);
        let h = ols_fit(&xs, &y)?.coefficients;
        let h_a = h[t1 + 1];
        let h_pa: Vec<f64> = (0..pa.len()).map(|q| h[t1 + 2 + q]).collect();
        let h_j = h[t1 + 2 + pa.len()];
        let fitted_s = &xs * &h;
        // M_j | Pa under each arm.
        let (reg, cvar) = if pa.is_empty() {
            (Vec::new(), cov[(j, j)])
        } else {
            let s_pp = sub_matrix(&cov, pa, pa);
            let s_jp = sub_matrix(&cov, &[j], pa);
            let inv = s_pp
                .try_inverse()
                .ok_or_else(|| Error::Singular("parent covariance".into()))?;
            let reg = &s_jp * &inv;
            let cv = cov[(j, j)] - (&reg * s_jp.transpose())[(0, 0)];
            (reg.iter().copied().collect::<Vec<f64>>(), cv)
        };
        let sd_j = cov[(j, j)].sqrt();
        let sd_c = cvar.max(0.0).sqrt();
        let plug = h_j * th_a[j];
        let mut corr = vec![0.0; n];
        for i in 0..n {
            let a = ds.a(i);
            let mj = mm[(i, j)];
            let mix = (1.0 - e1[i]) * crate::special::norm_pdf((mj - mean0[(i, j)]) / sd_j) / sd_j
                + e1[i] * crate::special::norm_pdf((mj - mean0[(i, j)] - th_a[j]) / sd_j) / sd_j;
            let mut c = 0.0;
            for arm in 0..2 {
                let af = arm as f64;
                let shift = |k: usize| if arm == 1 { th_a[k] } else { 0.0 };
                let mut cm = mean0[(i, j)] + shift(j);
                for (q, &k) in pa.iter().enumerate() {
                    cm += reg[q] * (mm[(i, k)] - mean0[(i, k)] - shift(k));
                }
                let w = mix / (crate::special::norm_pdf((mj - cm) / sd_c) / sd_c);
                let mu_s_obs = fitted_s[i] + h_a * (af - a);
                let tau_minus_expected: f64 = pa
                    .iter()
                    .enumerate()
                    .map(|(q, &k)| h_pa[q] * (mm[(i, k)] - mean0[(i, k)] - shift(k)))
                    .sum();
                let kappa = mu_ca0[i] + g_a * af;
                let varrho_score_corr = ipw(i, arm) * w * (y[i] - mu_s_obs) + ipw(i, arm) * tau_minus_expected;
                c += SIGN[arm] * (ipw(i, arm) * (y[i] - kappa) - varrho_score_corr);
            }
            if !c.is_finite() {
                return Err(Error::Numerical("density ratio overflow (positivity violation?)".into()));
            }
            corr[i] = c;
        }
        tm_terms.push((plug, corr));
    }

    let mk_terms = |plug: f64, corr: &[f64]| {
        let mut s = ScoreTerms {
            plug_in: vec![plug; n],
            correction: corr.to_vec(),
            mc_var: vec![0.0; n],
            truncated: Vec::new(),
        };
        s.truncated = corr.iter().map(|c| truncate && c.abs() > ln_n).collect();
        s
    };
    let dm_t = mk_terms(dm_plug, &dm_corr);
    let mut pieces_tm = Vec::new();
    for (plug, corr) in &tm_terms {
        pieces_tm.push(mk_terms(*plug, corr));
    }
    let mut dm = wrap(Estimand::DM, j, &dm_t, 0, 0.0, alpha);
    dm.estimate.method = Method::QrFast;

    let total = mec.len() as f64;
    let mut shares = vec![0.0; sets.len()];
    let mut tm_per_dag = Vec::with_capacity(mec.len());
    for g in mec {
        let r = sets.iter().position(|s| s.0 == g.parents(j)).expect("parent set present");
        shares[r] += 1.0 / total;
        tm_per_dag.push(pieces_tm[r].estimate());
    }
    let dm_est = dm.estimate.point;
    let im_per_dag: Vec<f64> = tm_per_dag.iter().map(|t| t - dm_est).collect();
    let mut tm_avg = ScoreTerms {
        plug_in: vec![0.0; n],
        correction: vec![0.0; n],
        mc_var: Vec::new(),
        truncated: vec![false; n],
    };
    for (r, t) in pieces_tm.iter().enumerate() {
        for i in 0..n {
            tm_avg.plug_in[i] += shares[r] * t.plug_in[i];
            if !t.truncated[i] {
                tm_avg.correction[i] += shares[r] * t.correction[i];
            }
        }
    }
    let im_t = tm_avg.minus(&dm_t);
    let avg_im = im_per_dag.iter().sum::<f64>() / total;
    let se = score_variance(&im_t.scores(), im_t.estimate()).sqrt();
    let im = QrEstimate {
        estimate: EffectEstimate::wald(Estimand::IM, Some(j), avg_im, se, alpha, Method::QrFast),
        mc_n: 0,
        mc_se: 0.0,
        truncation_count: dm.truncation_count + pieces_tm.iter().map(|t| t.truncation_count()).sum::<usize>(),
        bootstrap_reps: 0,
        tm_per_dag,
        im_per_dag,
    };
    Ok((dm, im))
}

/// Symmetric t-bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 500,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Row indices of bootstrap replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut r = sub_rng(seed, b as u64);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// `|θ* − θ̂| / max(σ*, 1e-12)` for each estimand of replicate `b`, or `None` if it failed.
pub fn replicate_statistics<F>(ds: &Dataset, base: &[(f64, f64)], estimator: &F, seed: u64, b: usize) -> Option<Vec<f64>>
where
    F: Fn(&Dataset) -> Result<Vec<(f64, f64)>> + ?Sized,
{
    let idx = resample_indices(ds.n(), seed, b);
    let rep = ds.select_rows(&idx).ok()?;
    let out = estimator(&rep).ok()?;
    if out.len() != base.len() || out.iter().any(|(p, s)| !p.is_finite() || !s.is_finite()) {
        return None;
    }
    Some(
        out.iter()
            .zip(base)
            .map(|((p, s), (p0, _))| (p - p0).abs() / s.max(1e-12))
            .collect(),
    )
}

/// Intervals `θ̂ ± q̂ σ̂` from replicate statistics, `q̂` the `1 − α` empirical quantile.
pub fn finalize_bootstrap(base: &[(f64, f64)], reps: &[Option<Vec<f64>>], alpha: f64) -> Result<Vec<(f64, f64)>> {
    let ok: Vec<&Vec<f64>> = reps.iter().flatten().collect();
    let failed = reps.len() - ok.len();
    if reps.is_empty() || failed as f64 > 0.1 * reps.len() as f64 {
        return Err(Error::Numerical(alloc::format!(
            "{failed} of {} bootstrap replicates failed",
            reps.len()
        )));
    }
    let mut out = Vec::with_capacity(base.len());
    for (k, (p, s)) in base.iter().enumerate() {
        let mut stats: Vec<f64> = ok.iter().map(|v| v[k]).collect();
        stats.sort_by(|a, b| a.total_cmp(b));
        let pos = libm::ceil((1.0 - alpha) * stats.len() as f64) as usize;
        let q = stats[pos.clamp(1, stats.len()) - 1];
        out.push((p - q * s, p + q * s));
    }
    Ok(out)
}

/// Symmetric t-bootstrap intervals for the estimands returned by `estimator`
/// as `(point, se)` pairs. `base` holds the full-sample values.
pub fn symmetric_t_bootstrap<F>(ds: &Dataset, base: &[(f64, f64)], estimator: F, cfg: BootstrapConfig) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&Dataset) -> Result<Vec<(f64, f64)>>,
{
    if cfg.b < 50 {
        return Err(invalid("bootstrap needs at least 50 replicates"));
    }
    let reps: Vec<Option<Vec<f64>>> = (0..cfg.b)
        .map(|b| replicate_statistics(ds, base, &estimator, cfg.seed, b))
        .collect();
    finalize_bootstrap(base, &reps, cfg.alpha)
}
