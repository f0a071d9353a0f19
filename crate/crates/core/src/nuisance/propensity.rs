use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::dataset::{Col, Dataset};
use crate::error::{Error, Result};
use crate::linmodel::cholesky_jitter;
use crate::special::{expit, norm_cdf, norm_pdf};

/// Binary-response link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Probit,
    Logit,
}

impl Link {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Link::Probit => norm_cdf(x),
            Link::Logit => expit(x),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            Link::Probit => norm_pdf(x),
            Link::Logit => {
                let p = expit(x);
                p * (1.0 - p)
            }
        }
    }

    pub fn other(self) -> Link {
        match self {
            Link::Probit => Link::Logit,
            Link::Logit => Link::Probit,
        }
    }
}

/// Propensity score `e₁(c) = P(A = 1 | C = c)`.
pub trait Propensity: Send + Sync {
    fn e1(&self, c: &[f64]) -> f64;

    fn e(&self, a: f64, c: &[f64]) -> f64 {
        let e1 = self.e1(c);
        if a == 1.0 {
            e1
        } else {
            1.0 - e1
        }
    }
}

/// GLM propensity with clipping to `[clip, 1 - clip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub link: Link,
    /// Intercept followed by one coefficient per confounder.
    pub coefficients: Vec<f64>,
    pub clip: f64,
}

impl PropensityModel {
    pub fn linear_predictor(&self, c: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(c)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

impl Propensity for PropensityModel {
    fn e1(&self, c: &[f64]) -> f64 {
        self.link
            .cdf(self.linear_predictor(c))
            .clamp(self.clip, 1.0 - self.clip)
    }
}

/// Binary GLM by Fisher scoring. Returns the coefficients over `x`'s columns.
pub fn fit_binary_glm(x: &DMatrix<f64>, y: &[f64], link: Link) -> Result<Vec<f64>> {
    let (n, k) = x.shape();
    let mut beta = DVector::<f64>::zeros(k);
    for _ in 0..100 {
        let eta = x * &beta;
        let mut xtwx = DMatrix::<f64>::zeros(k, k);
        let mut xtwz = DVector::<f64>::zeros(k);
        for i in 0..n {
            let mu = link.cdf(eta[i]).clamp(1e-12, 1.0 - 1e-12);
            let f = link.pdf(eta[i]).max(1e-300);
            let w = f * f / (mu * (1.0 - mu));
            let z = eta[i] + (y[i] - mu) / f;
            let row = x.row(i);
            for a in 0..k {
                xtwz[a] += w * row[a] * z;
                for b in 0..=a {
                    xtwx[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let next = cholesky_jitter(&xtwx, "GLM information")?.solve(&xtwz);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > 1e6 {
            return Err(Error::Convergence("GLM diverged (perfect separation?)".into()));
        }
        let step = (&next - &beta).amax();
        beta = next;
        if step < 1e-8 {
            return Ok(beta.iter().copied().collect());
        }
    }
    Err(Error::Convergence("GLM did not converge in 100 iterations".into()))
}

/// Maximum-likelihood propensity on (1, C).
pub fn fit_propensity(ds: &Dataset, link: Link, clip: f64) -> Result<PropensityModel> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::Validation("clip must lie in (0, 0.5)".into()));
    }
    let x = ds.design(&[Col::Conf]);
    let coefficients = fit_binary_glm(&x, ds.a_vec(), link)?;
    Ok(PropensityModel {
        link,
        coefficients,
        clip,
    })
}

/// Constant propensity, e.g. for randomized designs.
pub fn constant_propensity(e1: f64, n_conf: usize, clip: f64) -> PropensityModel {
    let mut coefficients = vec![0.0; n_conf + 1];
    coefficients[0] = crate::special::norm_quantile(e1);
    PropensityModel {
        link: Link::Probit,
        coefficients,
        clip,
    }
}
