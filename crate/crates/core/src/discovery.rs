//! PC-stable structure learning with Fisher-z partial-correlation tests.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{cpdag_of_dag, meek_closure, Cpdag, Dag, Pdag};
use crate::linmodel::{cholesky_jitter, sub_matrix};
use crate::special::norm_sf;

/// Default significance level.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Outcome of one conditional-independence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub independent: bool,
}

/// Options for [`pc_cpdag`].
#[derive(Debug, Clone, Copy)]
pub struct PcOptions {
    pub alpha: f64,
    /// Rank-transform columns before correlating.
    pub spearman: bool,
}

impl Default for PcOptions {
    fn default() -> Self {
        PcOptions {
            alpha: DEFAULT_ALPHA,
            spearman: false,
        }
    }
}

/// Pearson correlation matrix of the columns of `x`.
pub fn correlation(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut z = x.clone();
    for k in 0..d {
        let mean = z.column(k).sum() / n as f64;
        let mut col = z.column_mut(k);
        col.add_scalar_mut(-mean);
        let sd = col.norm();
        if sd > 0.0 {
            col /= sd;
        }
    }
    let mut r = z.transpose() * z;
    for k in 0..d {
        r[(k, k)] = 1.0;
    }
    r
}

/// Columns replaced by their ranks (ties get the average rank).
pub fn rank_transform(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, d);
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for k in 0..d {
        idx.clear();
        idx.extend(0..n);
        idx.sort_by(|&a, &b| x[(a, k)].total_cmp(&x[(b, k)]));
        let mut s = 0;
        while s < n {
            let mut e = s + 1;
            while e < n && x[(idx[e], k)] == x[(idx[s], k)] {
                e += 1;
            }
            let r = (s + e - 1) as f64 / 2.0 + 1.0;
            for &row in &idx[s..e] {
                out[(row, k)] = r;
            }
            s = e;
        }
    }
    out
}

/// Fisher-z test of `X_i ⟂ X_j | X_s` from a correlation matrix and sample size.
pub fn fisher_z_from_corr(
    corr: &DMatrix<f64>,
    n: usize,
    i: usize,
    j: usize,
    s: &[usize],
    alpha: f64,
) -> Result<CiTestResult> {
    if i == j || s.contains(&i) || s.contains(&j) {
        return Err(Error::Validation("test variables overlap".into()));
    }
    if n <= s.len() + 3 {
        return Err(Error::Validation("too few rows for the conditioning set".into()));
    }
    let rho = if s.is_empty() {
        corr[(i, j)]
    } else {
        let mut idx = vec![i, j];
        idx.extend_from_slice(s);
        let sub = sub_matrix(corr, &idx, &idx);
        let chol = cholesky_jitter(&sub, "conditioning correlation block")?;
        let prec = chol.inverse();
        -prec[(0, 1)] / libm::sqrt(prec[(0, 0)] * prec[(1, 1)])
    };
    let rho = rho.clamp(-1.0, 1.0);
    let statistic = if rho == 0.0 {
        0.0
    } else {
        libm::sqrt((n - s.len() - 3) as f64) * libm::atanh(rho)
    };
    let p_value = if statistic.is_finite() {
        (2.0 * norm_sf(statistic.abs())).min(1.0)
    } else {
        0.0
    };
    Ok(CiTestResult {
        statistic,
        p_value,
        independent: p_value > alpha,
    })
}

/// Fisher-z test on raw data (columns are variables).
pub fn fisher_z_test(
    x: &DMatrix<f64>,
    i: usize,
    j: usize,
    s: &[usize],
    alpha: f64,
) -> Result<CiTestResult> {
    fisher_z_from_corr(&correlation(x), x.nrows(), i, j, s, alpha)
}

fn next_subset(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for t in i + 1..k {
                c[t] = c[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// First separating subset of `pool` of size `level`, in lexicographic order.
fn find_sepset(
    corr: &DMatrix<f64>,
    n: usize,
    i: usize,
    j: usize,
    pool: &[usize],
    level: usize,
    alpha: f64,
) -> Result<Option<Vec<usize>>> {
    if pool.len() < level {
        return Ok(None);
    }
    let mut c: Vec<usize> = (0..level).collect();
    loop {
        let s: Vec<usize> = c.iter().map(|&k| pool[k]).collect();
        if fisher_z_from_corr(corr, n, i, j, &s, alpha)?.independent {
            return Ok(Some(s));
        }
        if level == 0 || !next_subset(&mut c, pool.len()) {
            return Ok(None);
        }
    }
}

/// Estimated CPDAG of the columns of `x`.
pub fn pc_cpdag(x: &DMatrix<f64>, opts: PcOptions) -> Result<Cpdag> {
    let (n, d) = x.shape();
    if n < d + 5 {
        return Err(Error::Validation("PC needs n ≥ d + 5".into()));
    }
    let corr = if opts.spearman {
        correlation(&rank_transform(x))
    } else {
        correlation(x)
    };
    let mut adj = vec![true; d * d];
    for i in 0..d {
        adj[i * d + i] = false;
    }
    let mut sepset: Vec<Option<Vec<usize>>> = vec![None; d * d];
    let mut level = 0;
    loop {
        let snapshot = adj.clone();
        let nbrs = |v: usize, other: usize| -> Vec<usize> {
            (0..d).filter(|&k| k != other && snapshot[v * d + k]).collect()
        };
        let mut any = false;
        for i in 0..d {
            for j in i + 1..d {
                if !adj[i * d + j] {
                    continue;
                }
                let pi = nbrs(i, j);
                let pj = nbrs(j, i);
                if pi.len() < level && pj.len() < level {
                    continue;
                }
                any = true;
                if n <= level + 3 {
                    continue;
                }
                let mut found = find_sepset(&corr, n, i, j, &pi, level, opts.alpha)?;
                if found.is_none() {
                    found = find_sepset(&corr, n, i, j, &pj, level, opts.alpha)?;
                }
                if let Some(s) = found {
                    adj[i * d + j] = false;
                    adj[j * d + i] = false;
                    sepset[i * d + j] = Some(s.clone());
                    sepset[j * d + i] = Some(s);
                }
            }
        }
        if !any {
            break;
        }
        level += 1;
    }
    let mut g = Pdag::new(d, adj)?;
    let mut triples = Vec::new();
    for k in 0..d {
        for i in 0..d {
            for j in i + 1..d {
                if g.adjacent(i, k) && g.adjacent(j, k) && !g.adjacent(i, j) {
                    let sep = sepset[i * d + j].as_deref().unwrap_or(&[]);
                    if !sep.contains(&k) {
                        triples.push((i, k, j));
                    }
                }
            }
        }
    }
    triples.sort();
    let mut all = g.clone();
    for &(i, k, j) in &triples {
        if all.directed(k, i) || all.directed(k, j) {
            continue;
        }
        all.orient(i, k);
        all.orient(j, k);
    }
    g = match meek_closure(&all) {
        Ok(h) if extension(&h).is_some() => h,
        // Conflicting colliders: accept them one at a time.
        _ => {
            for (i, k, j) in triples {
                if g.directed(k, i) || g.directed(k, j) {
                    continue;
                }
                let mut h = g.clone();
                h.orient(i, k);
                h.orient(j, k);
                if let Ok(h) = meek_closure(&h) {
                    if extension(&h).is_some() {
                        g = h;
                    }
                }
            }
            g
        }
    };
    let ext = match extension(&g) {
        Some(e) => e,
        None => ordered_orientation(&g)?,
    };
    Ok(cpdag_of_dag(&ext))
}

/// Orients every undirected edge along a topological order of the directed
/// part, breaking ties by the lowest index. Used when sampling error leaves a
/// skeleton with no consistent extension.
pub fn ordered_orientation(g: &Pdag) -> Result<Dag> {
    let d = g.d();
    let mut indeg: Vec<usize> = (0..d).map(|j| (0..d).filter(|&i| g.directed(i, j)).count()).collect();
    let mut done = vec![false; d];
    let mut rank = vec![0usize; d];
    for r in 0..d {
        let v = (0..d)
            .find(|&v| !done[v] && indeg[v] == 0)
            .ok_or_else(|| Error::Graph("directed part of the PC output is cyclic".into()))?;
        done[v] = true;
        rank[v] = r;
        for w in 0..d {
            if g.directed(v, w) {
                indeg[w] -= 1;
            }
        }
    }
    let mut adj = vec![false; d * d];
    for i in 0..d {
        for j in 0..d {
            if g.directed(i, j) || (g.undirected(i, j) && rank[i] < rank[j]) {
                adj[i * d + j] = true;
            }
        }
    }
    Dag::new(d, adj)
}

/// Consistent DAG extension of a PDAG (Dor and Tarsi), if one exists.
pub fn extension(g: &Pdag) -> Option<Dag> {
    let d = g.d();
    let mut alive = vec![true; d];
    let mut out = vec![false; d * d];
    for i in 0..d {
        for j in 0..d {
            if g.directed(i, j) {
                out[i * d + j] = true;
            }
        }
    }
    for _ in 0..d {
        let x = (0..d).find(|&x| {
            alive[x]
                && !(0..d).any(|y| alive[y] && g.directed(x, y))
                && (0..d).filter(|&y| alive[y] && g.undirected(x, y)).all(|y| {
                    (0..d).all(|z| z == x || z == y || !alive[z] || !g.adjacent(x, z) || g.adjacent(y, z))
                })
        })?;
        for y in 0..d {
            if alive[y] && g.undirected(x, y) {
                out[y * d + x] = true;
            }
        }
        alive[x] = false;
    }
    Dag::new(d, out).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{enumerate_mec, MEC_CAP};
    use crate::rng::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn four_cycle_without_colliders_still_orients() {
        let mut g = Pdag::empty(4);
        for (i, j) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
            g.set(i, j, true);
            g.set(j, i, true);
        }
        assert!(extension(&g).is_none());
        let dag = ordered_orientation(&g).unwrap();
        let rows = dag.rows();
        assert_eq!(rows[0], vec![0, 1, 0, 1]);
        assert_eq!(rows[1], vec![0, 0, 1, 0]);
        assert_eq!(rows[3], vec![0, 0, 0, 0]);
        assert_eq!(rows[2], vec![0, 0, 0, 1]);
    }

    #[test]
    fn zero_correlation_gives_unit_p() {
        let corr = DMatrix::<f64>::identity(3, 3);
        let r = fisher_z_from_corr(&corr, 100, 0, 1, &[2], 0.01).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.independent);
    }

    #[test]
    fn near_duplicate_is_dependent() {
        let mut r = rng(3);
        let mut y = DMatrix::<f64>::zeros(500, 2);
        for i in 0..500 {
            let v: f64 = StandardNormal.sample(&mut r);
            let e: f64 = StandardNormal.sample(&mut r);
            y[(i, 0)] = v;
            y[(i, 1)] = v + 1e-6 * e;
        }
        let t = fisher_z_test(&y, 0, 1, &[], 0.01).unwrap();
        assert!(!t.independent);
        assert!(t.p_value >= 0.0 && t.p_value <= 1.0);
    }

    #[test]
    fn ranks_average_ties() {
        let x = DMatrix::from_column_slice(4, 1, &[3.0, 1.0, 3.0, 2.0]);
        let r = rank_transform(&x);
        assert_eq!(r.as_slice(), &[3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn extension_of_cpdag_is_member() {
        let mut r = rng(9);
        for _ in 0..40 {
            let g = crate::graph::random_dag(6, 0.5, &mut r);
            let c = cpdag_of_dag(&g);
            let e = extension(c.as_pdag()).unwrap();
            assert!(enumerate_mec(&c, MEC_CAP).unwrap().contains(&e));
        }
    }

    #[test]
    fn subsets_in_lexicographic_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_subset(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }
}
