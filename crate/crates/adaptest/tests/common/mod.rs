//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Multivariate normal density with covariance `s`, evaluated from scratch.
pub fn gaussian_density(s: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    let d = s.nrows() as f64;
    let inv = s.clone().try_inverse().expect("invertible");
    let det = s.determinant();
    let q = z.dot(&(&inv * z));
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * det.sqrt())
}

/// `int g1 g2 / g0` by a tensor trapezoid rule in three dimensions.
///
/// The grid lives on `w` in `[-half, half]^3` and is mapped through
/// `z = L w`, where `L L' = K^{-1}` and `K = S1^{-1} + S2^{-1} - S0^{-1}` is
/// the precision of the integrand, so the nodes cover its bulk.
pub fn quadrature_pair(s1: &DMatrix<f64>, s2: &DMatrix<f64>, s0: &DMatrix<f64>, pts: usize, half: f64) -> f64 {
    assert_eq!(s1.nrows(), 3);
    let i1 = s1.clone().try_inverse().unwrap();
    let i2 = s2.clone().try_inverse().unwrap();
    let i0 = s0.clone().try_inverse().unwrap();
    let k = &i1 + &i2 - &i0;
    let kinv = k.try_inverse().unwrap();
    let l = kinv.cholesky().expect("integrand precision is positive definite").l();
    let jac = l.determinant().abs();
    let h = 2.0 * half / (pts - 1) as f64;
    let node = |i: usize| -half + i as f64 * h;
    let weight = |i: usize| if i == 0 || i == pts - 1 { 0.5 } else { 1.0 };
    let (c1, c2, c0) = (norm_const(s1), norm_const(s2), norm_const(s0));
    let total: f64 = (0..pts)
        .into_par_iter()
        .map(|a| {
            let mut acc = 0.0;
            for b in 0..pts {
                for c in 0..pts {
                    let w = DVector::from_vec(vec![node(a), node(b), node(c)]);
                    let z = &l * w;
                    let g1 = c1 * (-0.5 * z.dot(&(&i1 * &z))).exp();
                    let g2 = c2 * (-0.5 * z.dot(&(&i2 * &z))).exp();
                    let g0 = c0 * (-0.5 * z.dot(&(&i0 * &z))).exp();
                    acc += weight(a) * weight(b) * weight(c) * g1 * g2 / g0;
                }
            }
            acc
        })
        .sum();
    total * h * h * h * jac
}

fn norm_const(s: &DMatrix<f64>) -> f64 {
    let d = s.nrows() as f64;
    1.0 / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * s.determinant().sqrt())
}

/// Probabilists' Hermite polynomial by the three-term recurrence.
pub fn hermite_he(m: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if m == 0 {
        return 1.0;
    }
    for k in 1..m {
        let next = x * b - k as f64 * a;
        a = b;
        b = next;
    }
    b
}

fn factorial(m: u32) -> f64 {
    (1..=m).map(|v| v as f64).product()
}

/// Monte Carlo of `E[prod_l He_mu_l(U_l)/sqrt(mu_l!) prod_j He_nu_j(V_j)/sqrt(nu_j!)]`
/// for `(U, V)` Gaussian with identity blocks and cross covariance `r c'`.
/// Returns the mean and its standard error.
pub fn hermite_mc(mu: &[u32], nu: &[u32], r: &[f64], c: &[f64], samples: usize, seed: u64) -> (f64, f64) {
    let (a, b) = (r.len(), c.len());
    let d = a + b;
    let mut cov = DMatrix::identity(d, d);
    for i in 0..a {
        for j in 0..b {
            cov[(i, a + j)] = r[i] * c[j];
            cov[(a + j, i)] = r[i] * c[j];
        }
    }
    let l = cov.cholesky().expect("joint covariance is positive definite").l();
    let norm: f64 = mu.iter().chain(nu).map(|&m| factorial(m).sqrt()).product();
    let chunks = 64;
    let per = samples / chunks;
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut g = rng(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
            let mut z = DVector::zeros(d);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..per {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut g);
                }
                let x = &l * &z;
                let mut f = 1.0;
                for (i, &m) in mu.iter().enumerate() {
                    f *= hermite_he(m, x[i]);
                }
                for (j, &m) in nu.iter().enumerate() {
                    f *= hermite_he(m, x[a + j]);
                }
                f /= norm;
                s += f;
                s2 += f * f;
            }
            (s, s2)
        })
        .collect();
    let total = (per * chunks) as f64;
    let s: f64 = parts.iter().map(|p| p.0).sum();
    let s2: f64 = parts.iter().map(|p| p.1).sum();
    let mean = s / total;
    let var = (s2 / total - mean * mean) * total / (total - 1.0);
    (mean, (var / total).sqrt())
}

/// Hypergeometric pmf by the ratio recurrence, independent of log-gamma.
pub fn hypergeometric_pmf(p: u64, k: u64) -> Vec<f64> {
    // P(J = 0) = C(p-k, k) / C(p, k) = prod_{i<k} (p - k - i) / (p - i)
    let mut p0 = 1.0;
    for i in 0..k {
        p0 *= (p - k - i) as f64 / (p - i) as f64;
    }
    let mut out = vec![p0];
    for j in 0..k {
        // P(j+1)/P(j) = (k-j)^2 / ((j+1)(p - 2k + j + 1))
        let ratio = ((k - j) as f64).powi(2) / ((j + 1) as f64 * (p - 2 * k + j + 1) as f64);
        let last = *out.last().unwrap();
        out.push(last * ratio);
    }
    out
}
