//! DAGs, CPDAGs, Meek closure and Markov equivalence class enumeration.
//!
//! Adjacency is a flattened `d × d` boolean matrix: `adj[i*d+j]` alone means
//! `i → j`; both `adj[i*d+j]` and `adj[j*d+i]` mean an undirected edge.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{dim, Error, Result};

/// Default cap on the number of enumerated MEC members.
pub const MEC_CAP: usize = 10_000;

/// Partially directed graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pdag {
    d: usize,
    adj: Vec<bool>,
}

impl Pdag {
    pub fn new(d: usize, adj: Vec<bool>) -> Result<Self> {
        if adj.len() != d * d {
            return Err(dim("adjacency is not square"));
        }
        if (0..d).any(|i| adj[i * d + i]) {
            return Err(Error::Graph("self loop".into()));
        }
        Ok(Pdag { d, adj })
    }

    pub fn empty(d: usize) -> Self {
        Pdag {
            d,
            adj: vec![false; d * d],
        }
    }

    /// From 0/1 rows.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(dim("adjacency is not square"));
        }
        let adj = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        Pdag::new(d, adj)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn adj(&self) -> &[bool] {
        &self.adj
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.adj[i * self.d + j] as u8).collect())
            .collect()
    }

    #[inline]
    pub fn has(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    #[inline]
    pub fn directed(&self, i: usize, j: usize) -> bool {
        self.has(i, j) && !self.has(j, i)
    }

    #[inline]
    pub fn undirected(&self, i: usize, j: usize) -> bool {
        self.has(i, j) && self.has(j, i)
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.has(i, j) || self.has(j, i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.adj[i * self.d + j] = v;
    }

    /// Turns an undirected edge into `i → j`.
    pub fn orient(&mut self, i: usize, j: usize) {
        self.adj[j * self.d + i] = false;
    }

    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in i + 1..self.d {
                if self.undirected(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn skeleton(&self) -> Vec<bool> {
        let d = self.d;
        let mut s = vec![false; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = self.adjacent(i, j);
            }
        }
        s
    }

    /// Unshielded colliders `(i, k, j)` with `i < j`, `i → k ← j` directed.
    pub fn v_structures(&self) -> Vec<(usize, usize, usize)> {
        let d = self.d;
        let mut out = Vec::new();
        for k in 0..d {
            for i in 0..d {
                if !self.directed(i, k) {
                    continue;
                }
                for j in i + 1..d {
                    if self.directed(j, k) && !self.adjacent(i, j) {
                        out.push((i, k, j));
                    }
                }
            }
        }
        out
    }

    /// True when the directed part has no cycle.
    pub fn directed_part_acyclic(&self) -> bool {
        topo_order(self.d, |i, j| self.directed(i, j)).is_some()
    }

    /// Whether `to` is reachable from `from` along directed edges.
    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.d];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            if seen[u] {
                continue;
            }
            seen[u] = true;
            for v in 0..self.d {
                if self.directed(u, v) && !seen[v] {
                    stack.push(v);
                }
            }
        }
        false
    }

    /// Square sub-block over `nodes`.
    pub fn induced(&self, nodes: &[usize]) -> Pdag {
        let k = nodes.len();
        let mut adj = vec![false; k * k];
        for (a, &u) in nodes.iter().enumerate() {
            for (b, &v) in nodes.iter().enumerate() {
                adj[a * k + b] = self.has(u, v);
            }
        }
        Pdag { d: k, adj }
    }
}

fn topo_order(d: usize, edge: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; d];
    for i in 0..d {
        for j in 0..d {
            if edge(i, j) {
                indeg[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..d).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(u) = ready.pop() {
        order.push(u);
        for v in 0..d {
            if edge(u, v) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(v);
                }
            }
        }
    }
    (order.len() == d).then_some(order)
}

/// Whether the directed reading of `adj` (`d × d`) is acyclic. Mutual
/// entries count as a 2-cycle.
pub fn is_dag(d: usize, adj: &[bool]) -> Result<bool> {
    if adj.len() != d * d {
        return Err(dim("adjacency is not square"));
    }
    if (0..d).any(|i| adj[i * d + i]) {
        return Ok(false);
    }
    Ok(topo_order(d, |i, j| adj[i * d + j]).is_some())
}

/// Directed acyclic graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dag(Pdag);

impl Dag {
    pub fn new(d: usize, adj: Vec<bool>) -> Result<Self> {
        if !is_dag(d, &adj)? {
            return Err(Error::Graph("graph has a directed cycle".into()));
        }
        Ok(Dag(Pdag::new(d, adj)?))
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let p = Pdag::from_rows(rows)?;
        Dag::new(p.d, p.adj)
    }

    pub fn d(&self) -> usize {
        self.0.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.0.has(i, j)
    }

    pub fn as_pdag(&self) -> &Pdag {
        &self.0
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.0.rows()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topo_order(self.0.d, |i, j| self.0.has(i, j)).expect("validated acyclic")
    }

    /// Parents of `j`, ascending.
    pub fn parents(&self, j: usize) -> Vec<usize> {
        parents_of(self, j)
    }

    pub fn induced(&self, nodes: &[usize]) -> Dag {
        Dag(self.0.induced(nodes))
    }
}

/// `{i : i → j}` in ascending order.
pub fn parents_of(g: &Dag, j: usize) -> Vec<usize> {
    (0..g.d()).filter(|&i| g.has_edge(i, j)).collect()
}

/// Completed (or maximally oriented) partially directed acyclic graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cpdag(Pdag);

impl Cpdag {
    /// Validates a Meek-closed PDAG with acyclic directed part.
    pub fn new(pdag: Pdag) -> Result<Self> {
        if !pdag.directed_part_acyclic() {
            return Err(Error::Graph("directed part has a cycle".into()));
        }
        let closed = meek_closure(&pdag)?;
        if closed != pdag {
            return Err(Error::Graph("not closed under the Meek rules".into()));
        }
        Ok(Cpdag(pdag))
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        Cpdag::new(Pdag::from_rows(rows)?)
    }

    /// A DAG read as a (trivial) equivalence class containing only itself.
    pub fn from_dag(g: &Dag) -> Cpdag {
        Cpdag(g.0.clone())
    }

    pub fn d(&self) -> usize {
        self.0.d
    }

    pub fn as_pdag(&self) -> &Pdag {
        &self.0
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.0.rows()
    }

    pub fn n_undirected(&self) -> usize {
        self.0.undirected_edges().len()
    }
}

/// Fixpoint of the four Meek orientation rules. Never reverses a directed
/// edge; fails when an orientation would close a directed cycle.
pub fn meek_closure(pdag: &Pdag) -> Result<Pdag> {
    let mut g = pdag.clone();
    let d = g.d;
    loop {
        let mut changed = false;
        for i in 0..d {
            for j in 0..d {
                if i == j || !g.undirected(i, j) {
                    continue;
                }
                if forced(&g, i, j) {
                    if g.reaches(j, i) {
                        return Err(Error::Graph("orientation closes a directed cycle".into()));
                    }
                    g.orient(i, j);
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(g);
        }
    }
}

/// Whether some Meek rule orients the undirected edge `i — j` as `i → j`.
fn forced(g: &Pdag, i: usize, j: usize) -> bool {
    let d = g.d;
    // R1: k → i, k and j nonadjacent.
    for k in 0..d {
        if k != j && g.directed(k, i) && !g.adjacent(k, j) {
            return true;
        }
    }
    // R2: i → k → j.
    for k in 0..d {
        if g.directed(i, k) && g.directed(k, j) {
            return true;
        }
    }
    // R3: i — k → j, i — l → j, k and l nonadjacent.
    for k in 0..d {
        if !(g.undirected(i, k) && g.directed(k, j)) {
            continue;
        }
        for l in k + 1..d {
            if g.undirected(i, l) && g.directed(l, j) && !g.adjacent(k, l) {
                return true;
            }
        }
    }
    // R4: i adj k → l → j, i adj l, k and j nonadjacent.
    for l in 0..d {
        if l == i || !g.directed(l, j) || !g.adjacent(i, l) {
            continue;
        }
        for k in 0..d {
            if k != i && k != j && g.directed(k, l) && g.adjacent(i, k) && !g.adjacent(k, j) {
                return true;
            }
        }
    }
    false
}

/// CPDAG of the equivalence class of `g`: skeleton, v-structures, Meek closure.
pub fn cpdag_of_dag(g: &Dag) -> Cpdag {
    let d = g.d();
    let mut p = Pdag::empty(d);
    for i in 0..d {
        for j in 0..d {
            if g.has_edge(i, j) {
                p.set(i, j, true);
                p.set(j, i, true);
            }
        }
    }
    for (i, k, j) in g.as_pdag().v_structures() {
        p.orient(i, k);
        p.orient(j, k);
    }
    Cpdag(meek_closure(&p).expect("pattern of a DAG is consistent"))
}

fn sort_members(out: &mut [Dag]) {
    out.sort_by(|a, b| a.0.adj.cmp(&b.0.adj));
}

/// All consistent extensions of `c`, ordered by flattened adjacency.
pub fn enumerate_mec(c: &Cpdag, cap: usize) -> Result<Vec<Dag>> {
    let target = c.0.v_structures();
    let mut out = Vec::new();
    enumerate_rec(&c.0, &target, cap, &mut out)?;
    sort_members(&mut out);
    Ok(out)
}

fn enumerate_rec(
    g: &Pdag,
    target: &[(usize, usize, usize)],
    cap: usize,
    out: &mut Vec<Dag>,
) -> Result<()> {
    let edges = g.undirected_edges();
    let Some(&(i, j)) = edges.first() else {
        if g.directed_part_acyclic() && g.v_structures() == target {
            if out.len() >= cap {
                return Err(Error::MecCap(cap));
            }
            out.push(Dag(g.clone()));
        }
        return Ok(());
    };
    for (u, v) in [(i, j), (j, i)] {
        let mut h = g.clone();
        h.orient(u, v);
        if let Ok(h) = meek_closure(&h) {
            enumerate_rec(&h, target, cap, out)?;
        }
    }
    Ok(())
}

/// Exhaustive search over all orientations of the undirected edges of `c`.
pub fn brute_force_mec(c: &Cpdag) -> Result<Vec<Dag>> {
    let edges = c.0.undirected_edges();
    if edges.len() > 20 {
        return Err(Error::Graph("too many undirected edges for brute force".into()));
    }
    let target = c.0.v_structures();
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << edges.len()) {
        let mut g = c.0.clone();
        for (b, &(i, j)) in edges.iter().enumerate() {
            if mask >> b & 1 == 1 {
                g.orient(j, i);
            } else {
                g.orient(i, j);
            }
        }
        if g.directed_part_acyclic() && g.v_structures() == target {
            out.push(Dag(g));
        }
    }
    sort_members(&mut out);
    Ok(out)
}

/// Mediator block `t..t+p` of a graph over `d ≥ t + p + 1` nodes.
pub fn mediator_subgraph(c: &Cpdag, t: usize, p: usize) -> Result<Cpdag> {
    if c.d() < t + p + 1 {
        return Err(dim("graph is smaller than t + p + 1"));
    }
    let nodes: Vec<usize> = (t..t + p).collect();
    Ok(Cpdag(c.0.induced(&nodes)))
}

/// Random DAG: edge `order[a] → order[b]` (a < b) with probability `prob`.
pub fn random_dag<R: Rng + ?Sized>(d: usize, prob: f64, rng: &mut R) -> Dag {
    let mut order: Vec<usize> = (0..d).collect();
    for k in (1..d).rev() {
        let s = rng.random_range(0..=k);
        order.swap(k, s);
    }
    let mut adj = vec![false; d * d];
    for a in 0..d {
        for b in a + 1..d {
            if rng.random::<f64>() < prob {
                adj[order[a] * d + order[b]] = true;
            }
        }
    }
    Dag::new(d, adj).expect("ordered edges are acyclic")
}
