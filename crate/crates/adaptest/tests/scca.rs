use adaptest::scca::{
    boundary, boundary_table, entrywise, gen_scca, global_sum, max_col, max_row, reduce_to_lt, scan, statistic,
    tau_red, threshold, Hypothesis, SccaInstance, SccaParams, Statistic, SCAN_CAP,
};
use adaptest::Error;
use nalgebra::DMatrix;

fn params(n: usize, s: usize, p1: usize, p2: usize, lambda: f64) -> SccaParams {
    SccaParams { n, s, p1, p2, lambda }
}

#[test]
fn null_cross_cov_envelope() {
    let pr = params(500, 2, 10, 20, 0.0);
    let rows = 2.0 * pr.n as f64;
    let env = 5.0 * ((pr.p1 * pr.p2) as f64).ln().sqrt() / rows.sqrt();
    let hits = (0..100)
        .filter(|&s| {
            let r = gen_scca(pr, Hypothesis::Null, s).unwrap().cross_cov();
            r.iter().all(|v| v.abs() <= env)
        })
        .count();
    assert!(hits >= 99, "{hits}");
}

#[test]
fn alternative_mean_on_support() {
    let (s, lambda) = (2, 0.4);
    let pr = params(2000, s, 6, 6, lambda);
    let mut vals = Vec::new();
    for seed in 0..40 {
        let inst = gen_scca(pr, Hypothesis::Alternative, seed).unwrap();
        let r = inst.cross_cov();
        for &i in &inst.support1 {
            for &j in &inst.support2 {
                vals.push(r[(i, j)]);
            }
        }
        // off support the mean is zero
        let off = (0..6).find(|j| !inst.support2.contains(j)).unwrap();
        assert!(r[(inst.support1[0], off)].abs() < 0.1);
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    let se = sd / (vals.len() as f64).sqrt();
    assert!((m - lambda / s as f64).abs() <= 3.0 * se + 1e-3, "{m} +- {se}");
}

#[test]
fn scalar_correlation() {
    let inst = gen_scca(params(5000, 1, 1, 1, 0.3), Hypothesis::Alternative, 3).unwrap();
    let (a, b) = (inst.u1.column(0), inst.u2.column(0));
    let n = a.len() as f64;
    let (ma, mb) = (a.mean(), b.mean());
    let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
    let rho = cov / (va * vb).sqrt();
    let se = (1.0 - 0.09) / n.sqrt();
    assert!((rho - 0.3).abs() < 3.0 * se, "{rho}");
}

#[test]
fn generator_rejects_bad_input() {
    assert!(matches!(gen_scca(params(10, 1, 3, 3, 1.0), Hypothesis::Null, 0), Err(Error::NotPositiveDefinite(_))));
    assert!(gen_scca(params(10, 4, 3, 3, 0.1), Hypothesis::Null, 0).is_err());
}

#[test]
fn single_entry_statistics() {
    let mut r = DMatrix::zeros(3, 4);
    r[(1, 2)] = 1.0;
    assert_eq!(scan(&r, 2, SCAN_CAP).unwrap(), 0.25);
    assert_eq!(entrywise(&r), 1.0);
    assert_eq!(max_col(&r, 2), 0.5);
    assert_eq!(max_row(&r, 2), 0.5);
}

#[test]
fn scan_with_unit_block_is_entrywise() {
    let inst = gen_scca(params(50, 1, 5, 7, 0.2), Hypothesis::Alternative, 8).unwrap();
    let r = inst.cross_cov();
    assert_eq!(scan(&r, 1, SCAN_CAP).unwrap(), entrywise(&r));
}

#[test]
fn scan_matches_brute_force() {
    let inst = gen_scca(params(30, 2, 5, 5, 0.3), Hypothesis::Alternative, 2).unwrap();
    let r = inst.cross_cov();
    let mut best = f64::NEG_INFINITY;
    for a in 0..5 {
        for b in a + 1..5 {
            for c in 0..5 {
                for d in c + 1..5 {
                    best = best.max((r[(a, c)] + r[(a, d)] + r[(b, c)] + r[(b, d)]) / 4.0);
                }
            }
        }
    }
    assert!((scan(&r, 2, SCAN_CAP).unwrap() - best).abs() < 1e-15);
}

#[test]
fn global_sum_of_ones() {
    assert_eq!(global_sum(&DMatrix::from_element(2, 2, 1.0)), 1.0);
}

#[test]
fn scan_budget() {
    let r = DMatrix::zeros(60, 3);
    assert!(matches!(scan(&r, 10, 1000), Err(Error::ScanBudgetExceeded(_))));
    assert!(matches!(statistic(Statistic::Scan, &DMatrix::zeros(200, 2), 6), Err(Error::ScanBudgetExceeded(_))));
}

#[test]
fn boundary_ordering_grid() {
    for n in [100, 1000, 10_000] {
        for p1 in [5, 20, 80] {
            for p2 in [p1, 2 * p1, 10 * p1] {
                for s in 1..=p1.min(6) {
                    let sc = boundary(Statistic::Scan, n, s, p1, p2);
                    assert!(sc <= boundary(Statistic::Entrywise, n, s, p1, p2) + 1e-15);
                    assert!(sc <= boundary(Statistic::MaxCol, n, s, p1, p2) + 1e-15);
                }
            }
        }
    }
    let want = (4.0 * 100f64.ln() / 1e4).sqrt();
    assert!((boundary(Statistic::Scan, 10_000, 4, 10, 100) - want).abs() < 1e-15);
    assert!((want - 0.04292).abs() < 1e-5);
    assert_eq!(boundary_table(100, 2, 5, 10).len(), 5);
}

#[test]
fn thresholds_scale_with_constant() {
    for st in Statistic::ALL {
        let a = threshold(st, 400, 2, 10, 20, 1.0);
        assert!(a > 0.0);
        assert!((threshold(st, 400, 2, 10, 20, 3.0) - 3.0 * a).abs() < 1e-14);
    }
}

#[test]
fn reduction_tau() {
    let want = 0.1 / (2.0 - 0.01 * 0.04) * 0.04 * 5.0 / 10.0;
    assert!((tau_red(0.1, 1.0, 0.2, 5, 100) - want).abs() < 1e-12);
    assert!((want - 1.00020e-3).abs() < 1e-8);
}

#[test]
fn reduction_null_covariance() {
    let (p1, p2, sigma) = (3, 2, 1.5);
    let n = 10_000;
    let inst = gen_scca(params(n, 1, p1, p2, 0.0), Hypothesis::Null, 17).unwrap();
    let t0 = 0.7;
    let red = reduce_to_lt(&inst, sigma, 0.3, t0, 0.05, 0.05, 4).unwrap();
    let (x, y) = (&red.data.x, &red.data.y);
    assert_eq!(x.nrows(), n);
    // undo the anchor shift to recover the raw response
    let beta0 = t0 - red.tau;
    let raw = y - x.column(0) * beta0;
    let p = p1 + p2;
    let mut z = DMatrix::zeros(n, p + 1);
    z.set_column(0, &raw);
    z.columns_mut(1, p).copy_from(x);
    let cov = z.transpose() * &z / n as f64;
    let tol = 5.0 / (n as f64).sqrt();
    for i in 0..=p {
        for j in 0..=p {
            let want = match (i, j) {
                (0, 0) => sigma * sigma,
                _ if i == j => 1.0,
                _ => 0.0,
            };
            assert!((cov[(i, j)] - want).abs() <= tol, "({i},{j}) {}", cov[(i, j)]);
        }
    }
}

#[test]
fn reduction_is_deterministic() {
    let inst = gen_scca(params(40, 2, 4, 5, 0.3), Hypothesis::Alternative, 1).unwrap();
    let a = reduce_to_lt(&inst, 1.0, 0.2, 0.0, 0.05, 0.05, 9).unwrap();
    let b = reduce_to_lt(&inst, 1.0, 0.2, 0.0, 0.05, 0.05, 9).unwrap();
    assert_eq!(a.data.x, b.data.x);
    assert_eq!(a.data.y, b.data.y);
    assert_eq!(a.problem.k_u, 8);
}

#[test]
fn reduction_needs_even_rows() {
    let pr = params(1, 1, 2, 2, 0.0);
    let inst = SccaInstance {
        u1: DMatrix::zeros(3, 2),
        u2: DMatrix::zeros(3, 2),
        params: pr,
        hypothesis: Hypothesis::Null,
        support1: vec![],
        support2: vec![],
    };
    assert_eq!(reduce_to_lt(&inst, 1.0, 0.2, 0.0, 0.05, 0.05, 0).unwrap_err(), Error::OddPairCount(3));
}
