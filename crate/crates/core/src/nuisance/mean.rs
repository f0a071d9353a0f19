use alloc::vec::Vec;

use crate::dataset::{Col, Dataset};
use crate::error::{dim, invalid, Result};
use crate::linmodel::ols_fit;

/// Conditioning set `S` of an outcome mean `μ(x_S)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeanSet {
    pub conf: bool,
    pub exposure: bool,
    /// Mediator indices, ascending.
    pub mediators: Vec<usize>,
}

impl MeanSet {
    pub fn new(conf: bool, exposure: bool, mut mediators: Vec<usize>) -> Self {
        mediators.sort_unstable();
        mediators.dedup();
        MeanSet {
            conf,
            exposure,
            mediators,
        }
    }

    /// `(C, A, M)`.
    pub fn full(p: usize) -> Self {
        MeanSet::new(true, true, (0..p).collect())
    }

    /// `(C, A)`.
    pub fn ca() -> Self {
        MeanSet::new(true, true, Vec::new())
    }

    /// `(C, A, Pa_j, M_j)`.
    pub fn with_parents(j: usize, parents: &[usize]) -> Self {
        let mut m = parents.to_vec();
        m.push(j);
        MeanSet::new(true, true, m)
    }

    pub fn empty() -> Self {
        MeanSet::new(false, false, Vec::new())
    }

    fn columns(&self) -> Vec<Col> {
        let mut cols = Vec::new();
        if self.conf {
            cols.push(Col::Conf);
        }
        if self.exposure {
            cols.push(Col::Exposure);
        }
        cols.extend(self.mediators.iter().map(|&k| Col::Mediator(k)));
        cols
    }
}

/// Outcome regression `μ(x_S) = E[Y | X_S = x_S]`.
pub trait OutcomeMean: Send + Sync {
    fn set(&self) -> &MeanSet;

    /// Evaluates at `(c, a, m)`; `m` is the full mediator vector and
    /// coordinates outside the set are ignored.
    fn eval(&self, c: &[f64], a: f64, m: &[f64]) -> f64;

    /// Linear coefficients, when the model is linear in its inputs.
    fn linear(&self) -> Option<&LinearMean> {
        None
    }
}

/// `μ(x_S) = b₀ + b_C·c + b_A·a + Σ_{k∈S} b_k m_k`, with zeros outside `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMean {
    pub set: MeanSet,
    pub intercept: f64,
    pub coef_c: Vec<f64>,
    pub coef_a: f64,
    /// Length `p`; zero for mediators outside the set.
    pub coef_m: Vec<f64>,
}

impl OutcomeMean for LinearMean {
    fn set(&self) -> &MeanSet {
        &self.set
    }

    fn eval(&self, c: &[f64], a: f64, m: &[f64]) -> f64 {
        let mut v = self.intercept + self.coef_a * a;
        for (b, x) in self.coef_c.iter().zip(c) {
            v += b * x;
        }
        for &k in &self.set.mediators {
            v += self.coef_m[k] * m[k];
        }
        v
    }

    fn linear(&self) -> Option<&LinearMean> {
        Some(self)
    }
}

/// OLS of Y on `(1, X_S)`.
pub fn fit_mean(ds: &Dataset, set: &MeanSet) -> Result<LinearMean> {
    if set.mediators.iter().any(|&k| k >= ds.p()) {
        return Err(dim("mean set names a missing mediator"));
    }
    let x = ds.design(&set.columns());
    if ds.n() <= x.ncols() {
        return Err(invalid("too few rows for the outcome regression"));
    }
    let fit = ols_fit(&x, &ds.y_dvec())?;
    let b = &fit.coefficients;
    let mut pos = 1;
    let mut coef_c = alloc::vec![0.0; ds.n_conf()];
    if set.conf {
        coef_c.copy_from_slice(&b.as_slice()[pos..pos + ds.n_conf()]);
        pos += ds.n_conf();
    }
    let mut coef_a = 0.0;
    if set.exposure {
        coef_a = b[pos];
        pos += 1;
    }
    let mut coef_m = alloc::vec![0.0; ds.p()];
    for &k in &set.mediators {
        coef_m[k] = b[pos];
        pos += 1;
    }
    Ok(LinearMean {
        set: set.clone(),
        intercept: b[0],
        coef_c,
        coef_a,
        coef_m,
    })
}
