use adaptest::model::make_loading;
use adaptest::profile::{
    classify_cell, cutoff, example_profile, j1, k_eff, nu1, nu2, phi, rate_bounds, regime_and_cutoff,
    regular_phase, solve_zeta, top_norm, upper_objective, PhaseLabel, ProfileKind, Regime, TAG_L2,
    TAG_L2_INFLATED,
};
use adaptest::Error;

fn flat(k: usize, a: f64) -> adaptest::model::LoadingVector {
    make_loading(&vec![a; k]).unwrap()
}

#[test]
fn top_norm_examples() {
    let xi = make_loading(&[3.0, 2.0, 1.0]).unwrap();
    assert!((top_norm(&xi, 2.0) - 13f64.sqrt()).abs() < 1e-14);
    assert!((top_norm(&xi, 1.5) - 13f64.sqrt()).abs() < 1e-14);
    assert_eq!(top_norm(&xi, 0.0), 0.0);
    let e1 = make_loading(&[1.0, 0.0, 0.0]).unwrap();
    for t in [1.0, 2.0, 7.5] {
        assert_eq!(top_norm(&e1, t), 1.0);
    }
}

#[test]
fn root_for_flat_loading() {
    let xi = flat(4, 1.0);
    let (z, l) = solve_zeta(&xi, 2).unwrap();
    assert!((z - 2.0 * 2f64.ln()).abs() < 1e-10);
    assert!((l - 1.177410).abs() < 1e-6);
    assert!((phi(&xi, z) - 1.0).abs() < 1e-10);

    let (z, l) = solve_zeta(&xi, 6).unwrap();
    assert!((z - 2.0 * (4.0f64 / 6.0).ln()).abs() < 1e-10);
    assert_eq!(l, 0.0);
}

#[test]
fn root_for_single_spike() {
    let xi = make_loading(&[1.0, 0.0, 0.0]).unwrap();
    let (z, l) = solve_zeta(&xi, 2).unwrap();
    assert!(z.abs() < 1e-10);
    assert!(l < 1e-5);
}

#[test]
fn nu_examples() {
    let xi = flat(4, 1.0);
    assert!((nu1(&xi, 2).unwrap() - 3.354820).abs() < 1e-6);
    assert!((nu1(&xi, 6).unwrap() - 2.0).abs() < 1e-12);
    assert!((nu2(&xi, 6) - 2.0).abs() < 1e-14);
    let xi = make_loading(&[3.0, 2.0, 1.0, 0.0, 0.0]).unwrap();
    assert!((nu2(&xi, 2) - 13f64.sqrt()).abs() < 1e-14);
}

#[test]
fn j1_counts_large_coordinates() {
    let xi = make_loading(&[3.0, 2.0, 1.0, 0.0]).unwrap();
    assert_eq!(j1(&xi, 2.0), 2);
    assert_eq!(j1(&xi, 0.0), 4);
    assert_eq!(j1(&xi, 5.0), 0);
}

#[test]
fn cutoff_examples() {
    let (r, m) = cutoff(10, 1_000_000, 10_000);
    assert_eq!(r, Regime::UltraSparse);
    assert_eq!(m, 922);
    let (r, m) = cutoff(500, 1_000_000, 10_000);
    assert_eq!(r, Regime::ModeratelySparse);
    assert_eq!(m, 10_000);
    assert_eq!(k_eff(10, 1_000_000, 10_000, 1), 10);
}

#[test]
fn summary_fields_consistent() {
    let xi = make_loading(&[3.0, 2.0, 1.0, 0.5, 0.1]).unwrap();
    let s = regime_and_cutoff(&xi, 2, 100, 5, 1).unwrap();
    assert!(s.lambda >= 0.0);
    assert!(s.nu1 >= top_norm(&xi, s.j1 as f64) - 1e-12);
    assert_eq!(s.nu2, top_norm(&xi, 2.0));
    assert_eq!(s.nu3 <= s.nu2, s.k_eff <= 2 || s.nu3 == s.nu2);
    assert!(regime_and_cutoff(&xi, 2, 1, 5, 1).is_err());
}

#[test]
fn rate_bound_endpoints() {
    let xi = make_loading(&[3.0, -2.0, 1.0, 0.5]).unwrap();
    let (k_u, n, p) = (2, 400, 4);
    let lp = (p as f64).ln();
    let nf = n as f64;
    let m0 = upper_objective(&xi, k_u, n, 0);
    assert!((m0 - 3.0 * k_u as f64 * (lp / nf).sqrt()).abs() < 1e-14);
    let mp = upper_objective(&xi, k_u, n, p);
    assert!((mp - xi.norm2() * (1.0 / nf.sqrt() + k_u as f64 * lp / nf)).abs() < 1e-14);
    let rb = rate_bounds(&xi, k_u, n, p).unwrap();
    assert!(rb.upper <= m0 && rb.upper <= mp);
    assert_eq!(rb.upper, upper_objective(&xi, k_u, n, rb.best_m));
}

#[test]
fn flat_dense_ratio_in_band() {
    // ultra-sparse, K <= k_u^2
    let (n, p) = (1_000_000, 10_000);
    for (k, k_u) in [(16, 5), (50, 10), (100, 20)] {
        let mut v = vec![0.0; p];
        v[..k].iter_mut().for_each(|x| *x = 1.0);
        let xi = make_loading(&v).unwrap();
        let rb = rate_bounds(&xi, k_u, n, p).unwrap();
        // with every hidden constant set to one the lower expression carries the
        // lambda k_u term, so the ratio can exceed one by a logarithmic factor
        let ratio = rb.lower / rb.upper;
        assert!((0.01..=(p as f64).ln()).contains(&ratio), "K={k} k_u={k_u} ratio={ratio}");
    }
}

#[test]
fn phase_tags() {
    let ph = regular_phase(0.2, 0.2, 0.8);
    assert!(ph.ultra_sparse);
    assert_eq!(ph.label, PhaseLabel::EasyL2);
    assert_eq!(ph.tags, vec![TAG_L2]);

    let ph = regular_phase(0.3, 0.4, 0.6);
    assert!(!ph.ultra_sparse);
    assert_eq!(ph.label, PhaseLabel::SparseLoadingL2Inflated);
    assert_eq!(ph.tags, vec![TAG_L2_INFLATED]);

    let ph = regular_phase(0.6, 0.4, 0.6);
    assert_eq!(ph.label, PhaseLabel::ComputationalGap);
    assert_eq!(ph.tags.len(), 2);

    assert_eq!(classify_cell(0.2, 0.0, 0.2, 0.8), PhaseLabel::StatisticallyImpossible);
    assert_eq!(classify_cell(0.2, 0.9, 0.2, 0.8), PhaseLabel::EasyL2);
}

#[test]
fn regular_profile() {
    let xi = example_profile(&ProfileKind::Regular { k: 4, a: 2.0, p: 6 }, 0).unwrap();
    assert_eq!(xi.coords(), &[2.0, 2.0, 2.0, 2.0, 0.0, 0.0]);
}

#[test]
fn multiscale_profile() {
    let kind = ProfileKind::Multiscale { k_u: 9, levels: 2, a: 1.0, p: 60, c0: 1.0 };
    let xi = example_profile(&kind, 0).unwrap();
    assert_eq!(xi.k_xi(), 45);
    assert!((top_norm(&xi, 9.0) - 1.0).abs() < 1e-12);
    assert!((top_norm(&xi, 45.0) - 2f64.sqrt()).abs() < 1e-12);

    let bad = ProfileKind::Multiscale { k_u: 9, levels: 3, a: 1.0, p: 200, c0: 1.0 };
    assert_eq!(example_profile(&bad, 0).unwrap_err(), Error::MultiscaleConstraint);
}

#[test]
fn subweibull_profile_envelope() {
    let p = 100_000;
    let xi = example_profile(&ProfileKind::SubWeibull { q: 2.0, p }, 11).unwrap();
    let lp = (p as f64).ln().sqrt();
    let top = xi.norm_inf();
    assert!(top >= 0.5 * lp && top <= 3.0 * lp, "max {top}");
}
