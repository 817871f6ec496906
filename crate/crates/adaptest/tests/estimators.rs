use adaptest::estimators::{
    gamma_b, project_with_radius, projection_direction, sample_cov, scaled_lasso, scaled_lasso_objective, soft,
    spiked_cov_estimate, universal_level, SpikedOptions,
};
use adaptest::linalg::sym_op_norm;
use adaptest::model::{generate_dataset, make_loading, Dataset, ModelParams};
use adaptest::Error;
use nalgebra::{DMatrix, DVector};

fn sparse_beta(p: usize, entries: &[(usize, f64)]) -> DVector<f64> {
    let mut b = DVector::zeros(p);
    for &(i, v) in entries {
        b[i] = v;
    }
    b
}

#[test]
fn zero_response_is_degenerate() {
    let th = ModelParams::new(DVector::zeros(3), DMatrix::identity(3, 3), 1.0);
    let mut d = generate_dataset(&th, 20, 1).unwrap();
    d.y.fill(0.0);
    assert_eq!(scaled_lasso(&d).unwrap_err(), Error::ZeroResidualDegenerate);
}

#[test]
fn lasso_recovers_two_spikes() {
    let (n, p) = (400, 20);
    let beta = sparse_beta(p, &[(0, 5.0), (1, -5.0)]);
    let th = ModelParams::new(beta.clone(), DMatrix::identity(p, p), 1.0);
    // the stated envelope is 1.5 sqrt(2 ln p / n) times a further 1.5 of slack
    let tol = 1.5 * 1.5 * (2.0 * (p as f64).ln() / n as f64).sqrt();
    let mut errs = Vec::new();
    let mut sig = Vec::new();
    for seed in 0..50 {
        let d = generate_dataset(&th, n, seed).unwrap();
        let fit = scaled_lasso(&d).unwrap();
        assert!(fit.converged);
        errs.push((&fit.beta_hat - &beta).norm());
        sig.push((fit.sigma_hat - 1.0).abs());
    }
    errs.sort_by(f64::total_cmp);
    sig.sort_by(f64::total_cmp);
    assert!(errs[25] <= tol, "median error {}", errs[25]);
    assert!(sig[25] <= 0.15, "median noise error {}", sig[25]);
}

#[test]
fn lasso_objective_non_increasing() {
    let p = 30;
    let th = ModelParams::new(sparse_beta(p, &[(3, 2.0), (7, -1.0)]), DMatrix::identity(p, p), 1.0);
    let d = generate_dataset(&th, 100, 5).unwrap();
    let fit = scaled_lasso(&d).unwrap();
    for w in fit.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
    }
    let last = *fit.objective_trace.last().unwrap();
    assert!((scaled_lasso_objective(&d, &fit.beta_hat, fit.sigma_hat) - last).abs() < 1e-9);
}

#[test]
fn orthonormal_design_soft_thresholds() {
    let (n, p) = (64, 8);
    let th = ModelParams::new(DVector::zeros(p), DMatrix::identity(p, p), 1.0);
    let g = generate_dataset(&th, n, 3).unwrap();
    let q = g.x.clone().qr().q();
    let x = q * (n as f64).sqrt();
    let beta = sparse_beta(p, &[(0, 1.5), (1, -0.8), (4, 0.1)]);
    let y = &x * &beta + &g.y * 0.5;
    let d = Dataset::new(x.clone(), y.clone()).unwrap();
    let fit = scaled_lasso(&d).unwrap();
    let z = x.tr_mul(&y) / n as f64;
    let t = fit.sigma_hat * universal_level(n, p);
    for j in 0..p {
        assert!((fit.beta_hat[j] - soft(z[j], t)).abs() < 1e-6, "coordinate {j}");
    }
}

#[test]
fn sample_cov_examples() {
    let n = 5;
    let d = Dataset::new(DMatrix::identity(n, n) * (n as f64).sqrt(), DVector::zeros(n)).unwrap();
    assert!((sample_cov(&d) - DMatrix::<f64>::identity(n, n)).amax() < 1e-14);

    let x = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 3.0]);
    let d = Dataset::new(x.clone(), DVector::zeros(1)).unwrap();
    assert_eq!(sample_cov(&d), x.transpose() * &x);

    let th = ModelParams::new(DVector::zeros(6), DMatrix::identity(6, 6), 1.0);
    let s = sample_cov(&generate_dataset(&th, 13, 2).unwrap());
    assert_eq!(s, s.transpose());
}

#[test]
fn projection_identity_closed_form() {
    let s = DMatrix::identity(3, 3);
    let r = project_with_radius(&s, &[1.0, 0.2, 0.0], 0.3);
    assert!(r.feasible);
    assert!((r.u_hat[0] - 0.7).abs() < 1e-8);
    assert!(r.u_hat[1].abs() < 1e-8 && r.u_hat[2].abs() < 1e-8);

    let r = project_with_radius(&s, &[1.0, 0.2, 0.0], 1.0);
    assert!(r.feasible);
    assert!(r.u_hat.amax() < 1e-12);
    assert!(r.objective.abs() < 1e-14);
}

#[test]
fn projection_beats_oracle_point() {
    let p = 10;
    let n = 500;
    let mut sigma = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            sigma[(i, j)] = 0.4f64.powi((i as i32 - j as i32).abs());
        }
    }
    let th = ModelParams::new(DVector::zeros(p), sigma, 1.0);
    let d = generate_dataset(&th, n, 4).unwrap();
    let s = sample_cov(&d);
    let xi = make_loading(&[1.0, -0.5, 0.3, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.1]).unwrap();
    let r = projection_direction(&s, &xi, 2.0, n);
    assert!(r.feasible);
    let xv = DVector::from_vec(xi.raw());
    let resid = &s * &r.u_hat - &xv;
    assert!(resid.amax() <= r.radius * (1.0 + 1e-8));
    let oracle = s.clone().try_inverse().unwrap() * &xv;
    let oracle_obj = oracle.dot(&(&s * &oracle));
    assert!(r.objective <= oracle_obj + 1e-10);
    // complementary slackness
    for j in 0..p {
        if r.u_hat[j].abs() > 1e-8 {
            assert!((resid[j].abs() - r.radius).abs() < 1e-6, "coordinate {j}");
        }
    }
}

#[test]
fn gamma_b_construction() {
    let a = DMatrix::from_fn(4, 4, |i, j| 1.0 + (i * 4 + j) as f64);
    let g = gamma_b(&a, &[1, 3]);
    assert_eq!(gamma_b(&g, &[1, 3]), g);
    assert_eq!(gamma_b(&a, &[]), DMatrix::identity(4, 4));
    assert_eq!(g[(1, 3)], a[(1, 3)]);
    assert_eq!(g[(0, 0)], 1.0);
    assert_eq!(g[(0, 1)], 0.0);
}

#[test]
fn spiked_identity_data_selects_empty_set() {
    let n = 6;
    let d = Dataset::new(DMatrix::identity(n, n) * (n as f64).sqrt(), DVector::zeros(n)).unwrap();
    let fit = spiked_cov_estimate(&d, 2, &SpikedOptions::default()).unwrap();
    assert!(fit.b_hat.is_empty());
    assert!(!fit.fell_back_identity);
    assert_eq!(fit.sigma_hat_spike, DMatrix::identity(n, n));
}

#[test]
fn spiked_recovers_planted_block() {
    let (p, k_u, n) = (6, 2, 2000);
    let v = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]) / 2f64.sqrt();
    let sigma = DMatrix::identity(p, p) + &v * v.transpose() * 0.5;
    let th = ModelParams::new(DVector::zeros(p), sigma.clone(), 1.0);
    let rate = 3.0 * (k_u as f64 * (p as f64).ln() / n as f64).sqrt();
    let (mut hit, mut close) = (0, 0);
    for seed in 0..50 {
        let d = generate_dataset(&th, n, 1000 + seed).unwrap();
        let fit = spiked_cov_estimate(&d, k_u, &SpikedOptions::default()).unwrap();
        assert!(fit.b_hat.len() <= k_u);
        if fit.b_hat.contains(&0) && fit.b_hat.contains(&1) {
            hit += 1;
        }
        if sym_op_norm(&(&fit.sigma_hat_spike - &sigma)) <= rate {
            close += 1;
        }
        let prod = &fit.omega_hat * &fit.sigma_hat_spike;
        assert!((prod - DMatrix::<f64>::identity(p, p)).amax() < 1e-10);
        for i in 0..p {
            for j in 0..p {
                if !(fit.b_hat.contains(&i) && fit.b_hat.contains(&j)) {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(fit.sigma_hat_spike[(i, j)], want);
                }
            }
        }
    }
    assert!(hit >= 45, "support hits {hit}");
    assert!(close >= 45, "rate hits {close}");
}

#[test]
fn spiked_budget_cap() {
    let p = 12;
    let th = ModelParams::new(DVector::zeros(p), DMatrix::identity(p, p), 1.0);
    let d = generate_dataset(&th, 50, 1).unwrap();
    let opts = SpikedOptions { combination_cap: 5, ..SpikedOptions::default() };
    assert!(matches!(spiked_cov_estimate(&d, 3, &opts), Err(Error::BudgetExceeded { .. })));
}
