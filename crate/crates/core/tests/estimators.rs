use mediate_core::dataset::{Col, Dataset};
use mediate_core::effects_ols::{ols_de_ie, ols_dm, ols_im_over, reg_coef_first, CiMode, OlsFits};
use mediate_core::effects_qr::{
    fast_qr_over, fit_bundle_for, qr_dm, qr_over, required_mean_sets, score_variance, strategy_over,
    symmetric_t_bootstrap, BootstrapConfig, McConfig, QrOptions, QrPieces,
};
use mediate_core::graph::Dag;
use mediate_core::linmodel::ols_fit;
use mediate_core::nuisance::{fit_propensity, FitOptions, Link, MediatorMode, NuisanceBundle, Propensity};
use mediate_core::sim::{gen_scenario, random_truth, Scenario};
use mediate_core::special::norm_pdf;
use mediate_core::Method;
use proptest::prelude::*;

fn data(p: usize, n: usize, seed: u64) -> (Dataset, Vec<Dag>) {
    let t = random_truth(Scenario::AllCorrect, p, 3, seed);
    let ds = gen_scenario(&t, Scenario::AllCorrect, n, seed + 100).unwrap();
    (ds, t.mec().unwrap())
}

fn exact_opts() -> QrOptions {
    QrOptions {
        truncate: false,
        ..QrOptions::default()
    }
}

fn gaussian_fit() -> FitOptions {
    FitOptions {
        link: Link::Probit,
        clip: 0.01,
        mediator: MediatorMode::Gaussian,
    }
}

/// Textbook augmented-weighting estimator for a single mediator, written
/// from scratch: returns the per-observation DM and TM scores.
fn single_mediator_oracle(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = ds.n();
    let nc = ds.n_conf();
    let e = fit_propensity(ds, Link::Probit, 0.01).unwrap();
    let xm = ds.design(&[Col::Conf, Col::Exposure]);
    let mf = ols_fit(&xm, &ds.mediator_dvec(0)).unwrap();
    let s = (mf.rss() / (n - (nc + 2)) as f64).sqrt();
    let g = &mf.coefficients;
    let yf = ols_fit(&ds.design(&[Col::Conf, Col::Exposure, Col::Mediators]), &ds.y_dvec()).unwrap();
    let b = &yf.coefficients;
    let kf = ols_fit(&xm, &ds.y_dvec()).unwrap();
    let k = &kf.coefficients;
    let lin = |coef: &[f64], c: &[f64]| coef[0] + (0..nc).map(|l| coef[1 + l] * c[l]).sum::<f64>();
    let mut dm = Vec::with_capacity(n);
    let mut tm = Vec::with_capacity(n);
    for i in 0..n {
        let c = ds.c_row(i);
        let (a, y, m) = (ds.a(i), ds.y(i), ds.m_row(i)[0]);
        let e1 = e.e1(c);
        let ea = [1.0 - e1, e1];
        let ind = [(a == 0.0) as u8 as f64, (a == 1.0) as u8 as f64];
        let mbar = |arm: f64| lin(g.as_slice(), c) + g[nc + 1] * arm;
        let dens = |arm: f64| norm_pdf((m - mbar(arm)) / s) / s;
        let mu = |arm: f64, mv: f64| lin(b.as_slice(), c) + b[nc + 1] * arm + b[nc + 2] * mv;
        let mut sdm = 0.0;
        let mut stm = 0.0;
        for arm in 0..2 {
            let af = arm as f64;
            let sign = if arm == 1 { 1.0 } else { -1.0 };
            let zeta = mu(1.0, mbar(af));
            sdm += sign
                * (ind[1] / e1 * dens(af) / dens(1.0) * (y - mu(1.0, m)) + ind[arm] / ea[arm] * (mu(1.0, m) - zeta) + zeta);
            let kappa = lin(k.as_slice(), c) + k[nc + 1] * af;
            let kscore = ind[arm] / ea[arm] * (y - kappa) + kappa;
            let mix = ea[0] * dens(0.0) + ea[1] * dens(1.0);
            let rscore = ind[arm] / ea[arm] * mix / dens(af) * (y - mu(af, m)) + mu(af, m);
            stm += sign * (kscore - rscore);
        }
        dm.push(sdm);
        tm.push(stm);
    }
    (dm, tm)
}

#[test]
fn single_mediator_matches_textbook_scores() {
    let (ds, mec) = data(1, 800, 3);
    let nuis = fit_bundle_for(&ds, FitOptions::default(), 0, &mec).unwrap();
    let res = qr_over(&ds, &nuis, 0, &mec, exact_opts()).unwrap();
    let (dm, tm) = single_mediator_oracle(&ds);
    let n = ds.n() as f64;
    let dm_hat = dm.iter().sum::<f64>() / n;
    let tm_hat = tm.iter().sum::<f64>() / n;
    assert!((res.dm.estimate.point - dm_hat).abs() < 1e-10);
    assert!((res.tm.estimate.point - tm_hat).abs() < 1e-10);
    assert!((res.im.estimate.point - (tm_hat - dm_hat)).abs() < 1e-10);
    let var = dm.iter().map(|s| (s - dm_hat).powi(2)).sum::<f64>() / (n * n);
    assert!((res.dm.estimate.se - var.sqrt()).abs() < 1e-10);
}

#[test]
fn score_variance_is_centred_second_moment() {
    let s = [1.0, 2.0, 4.0, 7.0];
    let v = score_variance(&s, 3.5);
    assert!((v - (6.25 + 2.25 + 0.25 + 12.25) / 16.0).abs() < 1e-15);
}

#[test]
fn fast_path_equals_general_exact_path() {
    for seed in 0..4 {
        let (ds, mec) = data(4, 600, seed);
        let j = seed as usize % 4;
        let nuis = fit_bundle_for(&ds, gaussian_fit(), j, &mec).unwrap();
        for truncate in [false, true] {
            let opts = QrOptions {
                truncate,
                ..QrOptions::default()
            };
            let general = qr_over(&ds, &nuis, j, &mec, opts).unwrap();
            let (dm, im) = fast_qr_over(&ds, j, &mec, 0.05, truncate, 0.01).unwrap();
            assert!((general.dm.estimate.point - dm.estimate.point).abs() < 1e-10, "seed {seed}");
            assert!((general.im.estimate.point - im.estimate.point).abs() < 1e-10, "seed {seed}");
            assert!((general.dm.estimate.se - dm.estimate.se).abs() < 1e-10);
            assert!((general.im.estimate.se - im.estimate.se).abs() < 1e-10);
            assert_eq!(general.dm.truncation_count, dm.truncation_count);
            for (a, b) in general.im.im_per_dag.iter().zip(&im.im_per_dag) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn monte_carlo_agrees_with_exact_within_error() {
    let (ds, mec) = data(3, 300, 8);
    let j = 1;
    let nuis = fit_bundle_for(&ds, gaussian_fit(), j, &mec).unwrap();
    let exact = qr_over(&ds, &nuis, j, &mec, exact_opts()).unwrap();
    let mc_opts = QrOptions {
        mc: McConfig { n: 400, seed: 2 },
        force_mc: true,
        truncate: false,
        alpha: 0.05,
    };
    let mc = qr_over(&ds, &nuis, j, &mec, mc_opts).unwrap();
    assert!(mc.dm.mc_se > 0.0 && mc.im.mc_se > 0.0);
    assert!((mc.dm.estimate.point - exact.dm.estimate.point).abs() < 4.0 * mc.dm.mc_se);
    assert!((mc.im.estimate.point - exact.im.estimate.point).abs() < 4.0 * mc.im.mc_se);
    let again = qr_over(&ds, &nuis, j, &mec, mc_opts).unwrap();
    assert_eq!(mc, again);
}

#[test]
fn per_dag_identities_hold() {
    let (ds, mec) = data(3, 500, 12);
    for j in 0..3 {
        let nuis = fit_bundle_for(&ds, gaussian_fit(), j, &mec).unwrap();
        let r = qr_over(&ds, &nuis, j, &mec, QrOptions::default()).unwrap();
        for (tm, im) in r.im.tm_per_dag.iter().zip(&r.im.im_per_dag) {
            assert!((tm - r.dm.estimate.point - im).abs() < 1e-10);
        }
        assert!((r.tm.estimate.point - r.dm.estimate.point - r.im.estimate.point).abs() < 1e-10);
        let o = ols_im_over(&ds, &mec, j, 0.05, CiMode::Analytic).unwrap();
        for (tm, im) in o.tm_per_dag.iter().zip(&o.im_per_dag) {
            assert!((tm - o.dm - im).abs() < 1e-12);
        }
        for m in [Method::M0, Method::M1, Method::M2, Method::M3] {
            let (dm, im) = strategy_over(&ds, &nuis, j, &mec, m, QrOptions::default()).unwrap();
            assert!(dm.point.is_finite() && im.point.is_finite());
        }
    }
}

#[test]
fn one_step_scores_average_to_zero() {
    let (ds, mec) = data(3, 400, 5);
    let nuis = fit_bundle_for(&ds, gaussian_fit(), 2, &mec).unwrap();
    let sets: Vec<Vec<usize>> = mec.iter().map(|g| g.parents(2)).collect();
    let mut uniq = sets.clone();
    uniq.sort();
    uniq.dedup();
    let pieces = QrPieces::compute(&ds, &nuis, 2, &uniq, exact_opts()).unwrap();
    let dm = pieces.dm_terms(false);
    let est = dm.estimate();
    let mean: f64 = dm.scores().iter().map(|s| s - est).sum::<f64>() / ds.n() as f64;
    assert!(mean.abs() < 1e-10);
    for r in 0..uniq.len() {
        let tm = pieces.tm_terms(r, false);
        let e = tm.estimate();
        let m: f64 = tm.scores().iter().map(|s| s - e).sum::<f64>() / ds.n() as f64;
        assert!(m.abs() < 1e-10);
    }
}

#[test]
fn the_m0_strategy_is_the_plug_in() {
    let (ds, mec) = data(3, 400, 6);
    let nuis = fit_bundle_for(&ds, gaussian_fit(), 0, &mec).unwrap();
    let (dm, im) = strategy_over(&ds, &nuis, 0, &mec, Method::M0, QrOptions::default()).unwrap();
    let fits = OlsFits::fit(&ds).unwrap();
    let ols = ols_dm(&ds, &fits, 0, 0.05).unwrap();
    assert!((dm.point - ols.point).abs() < 1e-10);
    let o = ols_im_over(&ds, &mec, 0, 0.05, CiMode::Analytic).unwrap();
    assert!((im.point - o.estimate.point).abs() < 1e-10);
}

#[test]
fn relabelling_mediators_relabels_estimates() {
    let (ds, mec) = data(3, 500, 9);
    let perm = [2usize, 0, 1];
    let ds2 = ds.permute_mediators(&perm).unwrap();
    let inv = |k: usize| perm.iter().position(|&s| s == k).unwrap();
    let mec2: Vec<Dag> = mec
        .iter()
        .map(|g| {
            let mut adj = vec![false; 9];
            for a in 0..3 {
                for b in 0..3 {
                    if g.has_edge(a, b) {
                        adj[inv(a) * 3 + inv(b)] = true;
                    }
                }
            }
            Dag::new(3, adj).unwrap()
        })
        .collect();
    let j = 0;
    let nuis = fit_bundle_for(&ds, gaussian_fit(), j, &mec).unwrap();
    let nuis2 = fit_bundle_for(&ds2, gaussian_fit(), inv(j), &mec2).unwrap();
    let a = qr_over(&ds, &nuis, j, &mec, QrOptions::default()).unwrap();
    let b = qr_over(&ds2, &nuis2, inv(j), &mec2, QrOptions::default()).unwrap();
    assert!((a.dm.estimate.point - b.dm.estimate.point).abs() < 1e-9);
    assert!((a.im.estimate.point - b.im.estimate.point).abs() < 1e-9);
}

#[test]
fn qr_dm_needs_the_fitted_means() {
    let (ds, _) = data(2, 200, 1);
    let empty = NuisanceBundle::fit(&ds, FitOptions::default(), &[]).unwrap();
    assert!(qr_dm(&ds, &empty, 0, QrOptions::default()).is_err());
    let full = NuisanceBundle::fit(&ds, FitOptions::default(), &required_mean_sets(2, 0, &[])).unwrap();
    assert!(qr_dm(&ds, &full, 0, QrOptions::default()).is_ok());
}

#[test]
fn bootstrap_is_deterministic_and_collapses_on_constants() {
    let (ds, _) = data(2, 200, 4);
    let stat = |d: &Dataset| -> mediate_core::Result<Vec<(f64, f64)>> {
        let fits = OlsFits::fit(d)?;
        let (de, _, _) = ols_de_ie(d, &fits, 0.05)?;
        Ok(vec![(de.point, de.se)])
    };
    let fits = OlsFits::fit(&ds).unwrap();
    let (de, _, _) = ols_de_ie(&ds, &fits, 0.05).unwrap();
    let cfg = BootstrapConfig {
        b: 200,
        alpha: 0.05,
        seed: 3,
    };
    let ci = symmetric_t_bootstrap(&ds, &[(de.point, de.se)], stat, cfg).unwrap();
    let again = symmetric_t_bootstrap(&ds, &[(de.point, de.se)], stat, cfg).unwrap();
    assert_eq!(ci, again);
    assert!(ci[0].0 < de.point && de.point < ci[0].1);
    let constant = |_: &Dataset| -> mediate_core::Result<Vec<(f64, f64)>> { Ok(vec![(1.5, 0.0)]) };
    let c = symmetric_t_bootstrap(&ds, &[(1.5, 0.0)], constant, cfg).unwrap();
    assert_eq!(c[0], (1.5, 1.5));
    let few = BootstrapConfig { b: 10, ..cfg };
    assert!(symmetric_t_bootstrap(&ds, &[(1.5, 0.0)], constant, few).is_err());
}

fn noiseless(n: usize, seed: u64) -> Dataset {
    let t = random_truth(Scenario::AllCorrect, 3, 3, seed);
    let mut t0 = t.clone();
    t0.sigma2_y = 0.0;
    gen_scenario(&t0, Scenario::AllCorrect, n, seed).unwrap()
}

#[test]
fn ols_noiseless_outcome_gives_exact_direct_effect() {
    let seed = 7;
    let t = random_truth(Scenario::AllCorrect, 3, 3, seed);
    let ds = noiseless(500, seed);
    let fits = OlsFits::fit(&ds).unwrap();
    let (de, ie, te) = ols_de_ie(&ds, &fits, 0.05).unwrap();
    assert!((de.point - t.alpha_ya).abs() < 1e-9);
    assert!(de.se < 1e-9);
    assert!((te.point - de.point - ie.point).abs() < 1e-12);
    for k in 0..3 {
        assert!((fits.beta_ym[k] - t.beta_ym[k]).abs() < 1e-9);
    }
}

#[test]
fn full_parent_set_leaves_no_indirect_part() {
    let (ds, _) = data(3, 400, 2);
    let fits = OlsFits::fit(&ds).unwrap();
    for j in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        assert!((reg_coef_first(&ds, j, &others).unwrap() - fits.beta_ym[j]).abs() < 1e-10);
    }
    // M_0 → M_1 → M_2 and M_0 → M_2: every mediator's parents are all earlier ones.
    let g = Dag::from_rows(&[vec![0, 1, 1], vec![0, 0, 1], vec![0, 0, 0]]).unwrap();
    let r = ols_im_over(&ds, &[g], 2, 0.05, CiMode::Analytic).unwrap();
    assert!(r.estimate.point.abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn outcome_scaling_scales_every_estimate(seed in 0u64..500, k in prop_oneof![-3.0..-0.2f64, 0.2..3.0f64]) {
        let (ds, mec) = data(3, 300, seed);
        let ds2 = ds.scale_outcome(k);
        let f1 = OlsFits::fit(&ds).unwrap();
        let f2 = OlsFits::fit(&ds2).unwrap();
        let (d1, i1, _) = ols_de_ie(&ds, &f1, 0.05).unwrap();
        let (d2, i2, _) = ols_de_ie(&ds2, &f2, 0.05).unwrap();
        let tol = 1e-8 * (1.0 + d1.point.abs() + i1.point.abs());
        prop_assert!((d2.point - k * d1.point).abs() < tol);
        prop_assert!((i2.point - k * i1.point).abs() < tol);
        prop_assert!((d2.se - k.abs() * d1.se).abs() < tol);
        let o1 = ols_im_over(&ds, &mec, 0, 0.05, CiMode::Analytic).unwrap();
        let o2 = ols_im_over(&ds2, &mec, 0, 0.05, CiMode::Analytic).unwrap();
        prop_assert!((o2.estimate.point - k * o1.estimate.point).abs() < 1e-8);
        prop_assert!((o2.estimate.se - k.abs() * o1.estimate.se).abs() < 1e-8);
        let (q1, _) = fast_qr_over(&ds, 0, &mec, 0.05, false, 0.01).unwrap();
        let (q2, _) = fast_qr_over(&ds2, 0, &mec, 0.05, false, 0.01).unwrap();
        prop_assert!((q2.estimate.point - k * q1.estimate.point).abs() < 1e-8);
    }

    #[test]
    fn ols_totals_decompose(seed in 0u64..1000) {
        let (ds, _) = data(2, 200, seed);
        let f = OlsFits::fit(&ds).unwrap();
        let (de, ie, te) = ols_de_ie(&ds, &f, 0.05).unwrap();
        prop_assert!((te.point - de.point - ie.point).abs() < 1e-10);
        prop_assert!(de.ci_low <= de.point && de.point <= de.ci_high);
    }
}
