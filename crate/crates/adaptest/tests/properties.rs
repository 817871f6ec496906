use adaptest::estimators::gamma_b;
use adaptest::inference::ConfidenceInterval;
use adaptest::low_degree::hermite_moment;
use adaptest::model::{h_inv, h_map, make_loading, ModelParams};
use adaptest::profile::{cutoff, nu1, phi, rate_bounds, solve_zeta, top_norm, upper_objective};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn loading() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -5.0..5.0f64], 2..40)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn theta() -> impl Strategy<Value = ModelParams> {
    (1usize..8).prop_flat_map(|p| {
        (
            prop::collection::vec(-2.0..2.0f64, p),
            prop::collection::vec(-1.0..1.0f64, p * p),
            0.1..3.0f64,
        )
            .prop_map(move |(b, a, s)| {
                let a = DMatrix::from_vec(p, p, a);
                let cov = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
                ModelParams::new(DVector::from_vec(b), cov, s)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn h_round_trip(th in theta()) {
        let back = h_map(&h_inv(&th)).unwrap();
        prop_assert!((&back.beta - &th.beta).amax() <= 1e-12 * (1.0 + th.beta.amax()) * 10.0);
        prop_assert!((&back.sigma_cov - &th.sigma_cov).amax() == 0.0);
        prop_assert!((back.noise_sd - th.noise_sd).abs() <= 1e-12 * 10.0 * (1.0 + th.beta.norm_squared()));
    }

    #[test]
    fn top_norm_monotone(raw in loading(), a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let xi = make_loading(&raw).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(top_norm(&xi, lo) <= top_norm(&xi, hi) + 1e-12);
        prop_assert!((top_norm(&xi, raw.len() as f64 + hi) - xi.norm2()).abs() <= 1e-12 * xi.norm2());
    }

    #[test]
    fn phi_strictly_decreasing(raw in loading(), z1 in -20.0..20.0f64, gap in 1e-3..10.0f64) {
        let xi = make_loading(&raw).unwrap();
        // keep zeta on the scale of the loading so neither side underflows
        let s = xi.norm_inf().powi(2);
        let (a, b) = (z1 * s / 20.0, (z1 + gap) * s / 20.0);
        let (pa, pb) = (phi(&xi, a), phi(&xi, b));
        if pa.is_finite() && pb > 0.0 && xi.k_xi() > 1 {
            prop_assert!(pa > pb, "{} {}", pa, pb);
        }
    }

    #[test]
    fn flat_closed_form(k in 1usize..10_000, a in 0.01..100.0f64, k_u in 1usize..200) {
        let xi = make_loading(&vec![a; k]).unwrap();
        let (z, l) = solve_zeta(&xi, k_u).unwrap();
        let kf = k as f64;
        let ku = k_u as f64;
        let z_closed = 2.0 * a * a * (2.0 * kf.sqrt() / ku).ln();
        prop_assert!((z - z_closed).abs() <= 1e-8 * z_closed.abs().max(a * a));
        let nu = nu1(&xi, k_u).unwrap();
        let want = if z_closed > 0.0 { z_closed.sqrt() * ku + a * ku / 2.0 } else { a * kf.sqrt() };
        prop_assert!((nu - want).abs() <= 1e-8 * want, "{} vs {} (lambda {})", nu, want, l);
    }

    #[test]
    fn nu1_scales(raw in loading(), c in 0.01..100.0f64, k_u in 1usize..20) {
        let xi = make_loading(&raw).unwrap();
        let scaled = make_loading(&raw.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
        let (a, b) = (nu1(&xi, k_u).unwrap(), nu1(&scaled, k_u).unwrap());
        prop_assert!((b - c * a).abs() <= 1e-8 * c * a);
    }

    #[test]
    fn upper_bound_permutation_invariant(raw in loading(), k_u in 1usize..10, n in 10usize..100_000, seed in any::<u64>()) {
        let p = raw.len();
        let mut perm = raw.clone();
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..p).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = rate_bounds(&make_loading(&raw).unwrap(), k_u, n, p.max(2)).unwrap();
        let b = rate_bounds(&make_loading(&perm).unwrap(), k_u, n, p.max(2)).unwrap();
        prop_assert!((a.upper - b.upper).abs() <= 1e-12 * a.upper);
    }

    #[test]
    fn cutoff_near_optimal(raw in loading(), k_u in 1usize..10, n in 10usize..100_000) {
        let xi = make_loading(&raw).unwrap();
        let p = raw.len();
        let rb = rate_bounds(&xi, k_u, n, p).unwrap();
        let (_, m) = cutoff(k_u, n, p);
        prop_assert!(upper_objective(&xi, k_u, n, m) <= 3.0 * rb.upper + 1e-15);
    }

    #[test]
    fn gamma_b_idempotent(vals in prop::collection::vec(-3.0..3.0f64, 36), mask in prop::collection::vec(any::<bool>(), 6)) {
        let a = DMatrix::from_vec(6, 6, vals);
        let b: Vec<usize> = (0..6).filter(|&i| mask[i]).collect();
        let once = gamma_b(&a, &b);
        prop_assert_eq!(gamma_b(&once, &b), once.clone());
        prop_assert_eq!(gamma_b(&a, &[]), DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn minkowski_additive(c1 in -5.0..5.0f64, r1 in 0.0..5.0f64, c2 in -5.0..5.0f64, r2 in 0.0..5.0f64) {
        let a = ConfidenceInterval::new(c1, r1, "a", 0.01);
        let b = ConfidenceInterval::new(c2, r2, "b", 0.02);
        let ab = a.minkowski(&b);
        let ba = b.minkowski(&a);
        prop_assert_eq!(ab.radius, r1 + r2);
        prop_assert_eq!(ab.center, ba.center);
        prop_assert_eq!(ab.radius, ba.radius);
        let spent: f64 = ab.budget.iter().map(|x| x.1).sum();
        prop_assert!((ab.level - (1.0 - spent)).abs() < 1e-15);
    }

    #[test]
    fn hermite_unbalanced_is_zero(
        mu in prop::collection::vec(0u32..4, 1..4),
        nu in prop::collection::vec(0u32..4, 1..4),
        r in prop::collection::vec(-1.0..1.0f64, 4),
        c in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let v = hermite_moment(&mu, &nu, &r[..mu.len()], &c[..nu.len()]);
        if mu.iter().sum::<u32>() != nu.iter().sum::<u32>() {
            prop_assert_eq!(v, 0.0);
        }
    }
}
