use mediate_core::discovery::{fisher_z_test, pc_cpdag, PcOptions};
use mediate_core::graph::{cpdag_of_dag, Cpdag, Dag};
use mediate_core::rng::rng;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

/// Linear Gaussian SEM over nodes in index order; `w[(i, k)]` weights `i → k`
/// and only `i < k` is read.
fn sem(w: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    let d = w.nrows();
    let mut r = rng(seed);
    let mut x = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            let mut v: f64 = StandardNormal.sample(&mut r);
            for l in 0..k {
                v += w[(l, k)] * x[(i, l)];
            }
            x[(i, k)] = v;
        }
    }
    x
}

fn weights(d: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(d, d);
    for &(i, k, b) in edges {
        w[(i, k)] = b;
    }
    w
}

fn truth_cpdag(w: &DMatrix<f64>) -> Cpdag {
    let d = w.nrows();
    let adj = (0..d * d).map(|e| w[(e / d, e % d)] != 0.0).collect();
    cpdag_of_dag(&Dag::new(d, adj).unwrap())
}

fn hits(w: &DMatrix<f64>, n: usize) -> usize {
    let want = truth_cpdag(w).rows();
    (0..20)
        .filter(|&s| pc_cpdag(&sem(w, n, 1000 + s), PcOptions::default()).unwrap().rows() == want)
        .count()
}

#[test]
fn chain_gives_undirected_chain() {
    let w = weights(3, &[(0, 1, 0.8), (1, 2, -0.7)]);
    let want = truth_cpdag(&w);
    assert_eq!(want.n_undirected(), 2);
    assert!(hits(&w, 50_000) >= 18);
}

#[test]
fn independent_columns_give_empty_graph() {
    assert!(hits(&weights(4, &[]), 5_000) >= 18);
}

#[test]
fn collider_edges_point_into_the_middle() {
    let w = weights(3, &[(0, 2, 0.7), (1, 2, 0.6)]);
    for s in 0..20 {
        let c = pc_cpdag(&sem(&w, 50_000, 50 + s), PcOptions::default()).unwrap();
        let g = c.as_pdag();
        assert!(g.directed(0, 2) && g.directed(1, 2), "seed {s}");
    }
}

#[test]
fn null_size_of_fisher_z() {
    let accepted = (0..500)
        .filter(|&s| {
            let x = sem(&weights(2, &[]), 10_000, 7_000 + s);
            fisher_z_test(&x, 0, 1, &[], 0.01).unwrap().independent
        })
        .count();
    assert!(accepted as f64 / 500.0 >= 0.98, "{accepted}");
}

#[test]
fn output_is_always_a_valid_cpdag() {
    for s in 0..30 {
        let w = weights(
            6,
            &[(0, 2, 0.3), (1, 2, 0.4), (2, 3, 0.2), (3, 5, 0.5), (1, 4, 0.15), (4, 5, -0.3)],
        );
        // Small samples give noisy skeletons; the result must still be Meek-closed.
        let c = pc_cpdag(&sem(&w, 40 + s as usize, s), PcOptions::default()).unwrap();
        Cpdag::from_rows(&c.rows()).unwrap();
    }
}

#[test]
fn deterministic_given_data() {
    let w = weights(5, &[(0, 1, 0.5), (1, 2, 0.5), (0, 3, 0.5), (3, 4, 0.5), (2, 4, 0.5)]);
    let x = sem(&w, 2_000, 3);
    let opts = PcOptions {
        alpha: 0.05,
        spearman: true,
    };
    assert_eq!(pc_cpdag(&x, opts).unwrap().rows(), pc_cpdag(&x, opts).unwrap().rows());
}

#[test]
fn every_collider_survives_propagation_from_the_others() {
    // Propagating from 0 → 2 ← 1 alone would orient 3 → 5 → 4 and hide the
    // collider at 5.
    let w = weights(6, &[(0, 2, 0.7), (1, 2, 0.6), (2, 3, 0.8), (3, 5, 0.6), (4, 5, 0.7), (0, 4, 0.5)]);
    let want = truth_cpdag(&w).rows();
    let hits = (0..5)
        .filter(|&s| pc_cpdag(&sem(&w, 20_000, 300 + s), PcOptions::default()).unwrap().rows() == want)
        .count();
    assert!(hits >= 4, "{hits}/5");
}
