//! Column-role-tagged observational data.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use nalgebra::{DMatrix, DVector};

use crate::error::{dim, invalid, Result};

/// Column names for each role block, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnNames {
    pub confounders: Vec<String>,
    pub exposure: String,
    pub mediators: Vec<String>,
    pub outcome: String,
}

impl ColumnNames {
    /// Generic names `c1.., a, m1.., y`.
    pub fn generic(n_conf: usize, p: usize) -> Self {
        ColumnNames {
            confounders: (1..=n_conf).map(|k| format!("c{k}")).collect(),
            exposure: "a".to_string(),
            mediators: (1..=p).map(|k| format!("m{k}")).collect(),
            outcome: "y".to_string(),
        }
    }

    /// All names in node order (C, A, M, Y).
    pub fn node_order(&self) -> Vec<String> {
        let mut v = self.confounders.clone();
        v.push(self.exposure.clone());
        v.extend(self.mediators.iter().cloned());
        v.push(self.outcome.clone());
        v
    }
}

/// Observational table `X = (C, A, M, Y)`. Blocks are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    n_conf: usize,
    p: usize,
    c: Vec<f64>,
    a: Vec<f64>,
    m: Vec<f64>,
    y: Vec<f64>,
    names: ColumnNames,
}

impl Dataset {
    /// Builds a dataset from row-major blocks. `c` is `n × n_conf`, `m` is `n × p`.
    pub fn new(
        n_conf: usize,
        p: usize,
        c: Vec<f64>,
        a: Vec<f64>,
        m: Vec<f64>,
        y: Vec<f64>,
        names: ColumnNames,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(invalid("dataset has zero rows"));
        }
        if a.len() != n || c.len() != n * n_conf || m.len() != n * p {
            return Err(dim("blocks disagree on the row count"));
        }
        if names.confounders.len() != n_conf || names.mediators.len() != p {
            return Err(dim("column names do not match block widths"));
        }
        if c.iter().chain(&m).chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entry"));
        }
        if a.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("non-binary exposure"));
        }
        let treated = a.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == n {
            return Err(invalid("exposure takes a single value"));
        }
        Ok(Dataset {
            n,
            n_conf,
            p,
            c,
            a,
            m,
            y,
            names,
        })
    }

    /// Same as [`Dataset::new`] with generic column names.
    pub fn from_blocks(
        n_conf: usize,
        p: usize,
        c: Vec<f64>,
        a: Vec<f64>,
        m: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        Self::new(n_conf, p, c, a, m, y, ColumnNames::generic(n_conf, p))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of confounders (`t - 1`).
    pub fn n_conf(&self) -> usize {
        self.n_conf
    }

    /// `t`, so that the exposure sits at node `t - 1`.
    pub fn t(&self) -> usize {
        self.n_conf + 1
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Node count `t + p + 1`.
    pub fn d(&self) -> usize {
        self.n_conf + self.p + 2
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    pub fn c_row(&self, i: usize) -> &[f64] {
        &self.c[i * self.n_conf..(i + 1) * self.n_conf]
    }

    pub fn m_row(&self, i: usize) -> &[f64] {
        &self.m[i * self.p..(i + 1) * self.p]
    }

    pub fn a(&self, i: usize) -> f64 {
        self.a[i]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn a_vec(&self) -> &[f64] {
        &self.a
    }

    pub fn y_vec(&self) -> &[f64] {
        &self.y
    }

    pub fn c_raw(&self) -> &[f64] {
        &self.c
    }

    pub fn m_raw(&self) -> &[f64] {
        &self.m
    }

    /// Number of exposed rows.
    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1.0).count()
    }

    /// Copy with numeric columns (C, M, Y) shifted to mean zero.
    pub fn centralize(&self) -> Dataset {
        let mut out = self.clone();
        center_cols(&mut out.c, self.n, self.n_conf);
        center_cols(&mut out.m, self.n, self.p);
        center_cols(&mut out.y, self.n, 1);
        out
    }

    /// Rows `idx` (repeats allowed), e.g. a bootstrap resample.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        let mut c = Vec::with_capacity(idx.len() * self.n_conf);
        let mut m = Vec::with_capacity(idx.len() * self.p);
        let mut a = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.n {
                return Err(dim("row index out of range"));
            }
            c.extend_from_slice(self.c_row(i));
            m.extend_from_slice(self.m_row(i));
            a.push(self.a[i]);
            y.push(self.y[i]);
        }
        Dataset::new(self.n_conf, self.p, c, a, m, y, self.names.clone())
    }

    /// Copy with mediator columns reordered: new column `k` is old column `perm[k]`.
    pub fn permute_mediators(&self, perm: &[usize]) -> Result<Dataset> {
        if perm.len() != self.p {
            return Err(dim("permutation length"));
        }
        let mut m = vec![0.0; self.m.len()];
        for i in 0..self.n {
            for (k, &src) in perm.iter().enumerate() {
                m[i * self.p + k] = self.m[i * self.p + src];
            }
        }
        let mut names = self.names.clone();
        names.mediators = perm.iter().map(|&s| self.names.mediators[s].clone()).collect();
        Dataset::new(self.n_conf, self.p, self.c.clone(), self.a.clone(), m, self.y.clone(), names)
    }

    /// Copy with the outcome multiplied by `k`.
    pub fn scale_outcome(&self, k: f64) -> Dataset {
        let mut out = self.clone();
        for v in &mut out.y {
            *v *= k;
        }
        out
    }

    /// Full `n × d` matrix in node order (C, A, M, Y).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(self.n, d, |i, k| self.node_value(i, k))
    }

    /// Value of node `k` in row `i`.
    pub fn node_value(&self, i: usize, k: usize) -> f64 {
        let t1 = self.n_conf;
        if k < t1 {
            self.c[i * t1 + k]
        } else if k == t1 {
            self.a[i]
        } else if k < t1 + 1 + self.p {
            self.m[i * self.p + (k - t1 - 1)]
        } else {
            self.y[i]
        }
    }

    /// Design with a leading intercept column followed by the listed columns.
    pub fn design(&self, cols: &[Col]) -> DMatrix<f64> {
        let width = 1 + cols.iter().map(|c| c.width(self)).sum::<usize>();
        let mut x = DMatrix::<f64>::zeros(self.n, width);
        for i in 0..self.n {
            x[(i, 0)] = 1.0;
            let mut k = 1;
            for col in cols {
                match *col {
                    Col::Conf => {
                        for v in self.c_row(i) {
                            x[(i, k)] = *v;
                            k += 1;
                        }
                    }
                    Col::Exposure => {
                        x[(i, k)] = self.a[i];
                        k += 1;
                    }
                    Col::Mediators => {
                        for v in self.m_row(i) {
                            x[(i, k)] = *v;
                            k += 1;
                        }
                    }
                    Col::Mediator(j) => {
                        x[(i, k)] = self.m[i * self.p + j];
                        k += 1;
                    }
                }
            }
        }
        x
    }

    pub fn y_dvec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    pub fn mediator_dvec(&self, j: usize) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.m[i * self.p + j])
    }
}

/// Column groups for [`Dataset::design`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Col {
    Conf,
    Exposure,
    Mediators,
    Mediator(usize),
}

impl Col {
    fn width(&self, ds: &Dataset) -> usize {
        match self {
            Col::Conf => ds.n_conf,
            Col::Mediators => ds.p,
            _ => 1,
        }
    }
}

fn center_cols(x: &mut [f64], n: usize, k: usize) {
    for col in 0..k {
        let mean = (0..n).map(|i| x[i * k + col]).sum::<f64>() / n as f64;
        for i in 0..n {
            x[i * k + col] -= mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_blocks(
            1,
            1,
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, 1.0],
            vec![2.0, 4.0, 9.0],
            vec![0.5, 1.5, 4.0],
        )
        .unwrap()
    }

    #[test]
    fn centralize_shifts_numeric_columns_only() {
        let ds = toy().centralize();
        assert_eq!(ds.c_raw(), &[-1.0, 0.0, 1.0]);
        assert_eq!(ds.a_vec(), &[0.0, 1.0, 1.0]);
        let my: f64 = ds.y_vec().iter().sum();
        assert!(my.abs() < 1e-12);
        let again = ds.centralize();
        for (u, v) in again.m_raw().iter().zip(ds.m_raw()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_exposure() {
        let err = Dataset::from_blocks(0, 0, vec![], vec![0.0, 2.0], vec![], vec![1.0, 2.0]);
        assert!(matches!(err, Err(crate::Error::Validation(ref s)) if s.contains("non-binary")));
        let err = Dataset::from_blocks(0, 0, vec![], vec![1.0, 1.0], vec![], vec![1.0, 2.0]);
        assert!(err.is_err());
    }

    #[test]
    fn node_order_matches_layout() {
        let ds = toy();
        let x = ds.to_matrix();
        assert_eq!(x.ncols(), 4);
        assert_eq!(x[(2, 0)], 3.0);
        assert_eq!(x[(2, 1)], 1.0);
        assert_eq!(x[(2, 2)], 9.0);
        assert_eq!(x[(2, 3)], 4.0);
        let d = ds.design(&[Col::Exposure, Col::Conf]);
        assert_eq!(d.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 2.0]);
    }
}
