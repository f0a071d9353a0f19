//! Least squares, the partitioned-regression operator Γ̂, and Gaussian laws.

use alloc::vec::Vec;
use alloc::format;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim, Error, Result};

/// Ridge added once to a singular normal-equations or covariance matrix.
pub const JITTER: f64 = 1e-10;

/// Ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
}

impl OlsFit {
    /// Residual sum of squares.
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Cholesky factor, retrying once with `JITTER · I`.
pub fn cholesky_jitter(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let k = m.nrows();
    Cholesky::new(m + DMatrix::<f64>::identity(k, k) * JITTER)
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Least squares of `response` on the columns of `design`.
pub fn ols_fit(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = design.shape();
    if response.len() != n {
        return Err(dim("response length differs from design rows"));
    }
    if n <= k {
        return Err(Error::Validation(format!("need n > k, got n={n}, k={k}")));
    }
    if (0..k).any(|c| design.column(c).amax() == 0.0) {
        return Err(Error::Singular("design has an all-zero column".into()));
    }
    let coefficients = if k == 0 {
        DVector::zeros(0)
    } else {
        let qr = design.clone().qr();
        let r = qr.r();
        let max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let full_rank = max > 0.0 && (0..k).all(|i| r[(i, i)].abs() > 1e-10 * max);
        if full_rank {
            let qtb = qr.q().transpose() * response;
            r.solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::Singular("triangular solve failed".into()))?
        } else {
            let xtx = design.transpose() * design;
            let chol = Cholesky::new(xtx + DMatrix::<f64>::identity(k, k) * JITTER)
                .ok_or_else(|| Error::Singular("design is rank deficient".into()))?;
            chol.solve(&(design.transpose() * response))
        }
    };
    let fitted = design * &coefficients;
    let residuals = response - &fitted;
    Ok(OlsFit {
        coefficients,
        residuals,
        fitted,
    })
}

/// Γ̂_{X,Z} = [Xᵀ(I−P_Z)X]⁻¹ Xᵀ(I−P_Z), a `k₁ × n` matrix.
pub fn gamma_transform(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != z.nrows() && z.ncols() > 0 {
        return Err(dim("blocks disagree on rows"));
    }
    let xr = residualize(x, z)?;
    let gram = xr.transpose() * &xr;
    let chol = cholesky_jitter(&gram, "Xᵀ(I−P_Z)X")?;
    Ok(chol.solve(&xr.transpose()))
}

/// (I − P_Z) X.
pub fn residualize(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() == 0 {
        return Ok(x.clone());
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let k = z.ncols();
    let max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if !(0..k).all(|i| r[(i, i)].abs() > 1e-10 * max) {
        return Err(Error::Singular("conditioning block is rank deficient".into()));
    }
    let q = qr.q();
    Ok(x - &q * (q.transpose() * x))
}

/// Sample covariance of residual columns with divisor `n - k`.
pub fn residual_covariance(res: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = res.nrows();
    let denom = (n.saturating_sub(k)).max(1) as f64;
    let mut s = res.transpose() * res / denom;
    symmetrize(&mut s);
    s
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in i + 1..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn sub_matrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub(crate) fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

/// Multivariate normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.shape() != (k, k) {
            return Err(dim("covariance shape"));
        }
        for i in 0..k {
            for j in 0..k {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Validation("covariance is not symmetric".into()));
                }
            }
        }
        if k > 0 {
            let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min < -1e-10 {
                return Err(Error::Validation("covariance is not positive semidefinite".into()));
            }
        }
        Ok(GaussianLaw { mean, cov })
    }

    pub fn standard(k: usize) -> Self {
        GaussianLaw {
            mean: DVector::zeros(k),
            cov: DMatrix::identity(k, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Law of the coordinates `idx` (in the given order).
    pub fn marginal(&self, idx: &[usize]) -> GaussianLaw {
        GaussianLaw {
            mean: sub_vector(&self.mean, idx),
            cov: sub_matrix(&self.cov, idx, idx),
        }
    }

    /// Law of the remaining coordinates (ascending) given `x_given = values`.
    pub fn condition(&self, given: &[usize], values: &[f64]) -> Result<GaussianLaw> {
        if given.len() != values.len() {
            return Err(dim("conditioning values"));
        }
        if given.iter().any(|&g| g >= self.dim()) {
            return Err(dim("conditioning index out of range"));
        }
        let rest: Vec<usize> = (0..self.dim()).filter(|k| !given.contains(k)).collect();
        if given.is_empty() {
            return Ok(self.marginal(&rest));
        }
        let s_gg = sub_matrix(&self.cov, given, given);
        let s_rg = sub_matrix(&self.cov, &rest, given);
        let s_rr = sub_matrix(&self.cov, &rest, &rest);
        let chol = cholesky_jitter(&s_gg, "conditioning block")?;
        let delta = DVector::from_fn(given.len(), |a, _| values[a] - self.mean[given[a]]);
        let mean = sub_vector(&self.mean, &rest) + &s_rg * chol.solve(&delta);
        let mut cov = s_rr - &s_rg * chol.solve(&s_rg.transpose());
        symmetrize(&mut cov);
        Ok(GaussianLaw { mean, cov })
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let k = self.dim();
        if x.len() != k {
            return Err(dim("density argument"));
        }
        if k == 0 {
            return Ok(0.0);
        }
        let chol = cholesky_jitter(&self.cov, "covariance")?;
        let delta = DVector::from_fn(k, |a, _| x[a] - self.mean[a]);
        let l = chol.l();
        let z = l
            .solve_lower_triangular(&delta)
            .ok_or_else(|| Error::Singular("covariance".into()))?;
        let logdet: f64 = (0..k).map(|i| libm::log(l[(i, i)])).sum::<f64>() * 2.0;
        Ok(-0.5 * (z.norm_squared() + logdet + k as f64 * libm::log(2.0 * core::f64::consts::PI)))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(libm::exp(self.log_density(x)?))
    }

    /// Sampler using a symmetric square root, exact for singular covariances.
    pub fn sampler(&self) -> GaussianSampler {
        let k = self.dim();
        let factor = if k == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let eig = SymmetricEigen::new(self.cov.clone());
            let root = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
            &eig.eigenvectors * DMatrix::from_diagonal(&root)
        };
        GaussianSampler {
            mean: self.mean.clone(),
            factor,
        }
    }
}

/// Draws from a fixed Gaussian law.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = self.mean.len();
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        for a in 0..k {
            let mut v = self.mean[a];
            for b in 0..k {
                v += self.factor[(a, b)] * z[b];
            }
            out[a] = v;
        }
    }
}
