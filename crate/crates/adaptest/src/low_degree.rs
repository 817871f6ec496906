//! Low-degree likelihood-ratio norms for rank-one cross-covariance priors.
//!
//! For a point whose joint covariance (after scaling the response to unit
//! variance) has identity blocks `U` and `V` and cross covariance `r c'`,
//! the normalised Hermite moment of a row multi-index `(mu, nu)` is
//! `k! r^mu c^nu / sqrt(mu! nu!)` when `|mu| = |nu| = k` and zero otherwise.

use crate::error::{Error, Result};
use crate::linalg;
use crate::priors::{self, PriorDraw};

/// Enumeration cap on the number of multi-indices of degree at most `D`.
pub const SIZE_BUDGET: u64 = 10_000_000;

/// Normalised Hermite moment of one row.
pub fn hermite_moment(mu: &[u32], nu: &[u32], r: &[f64], c: &[f64]) -> f64 {
    let k: u32 = mu.iter().sum();
    if k != nu.iter().sum::<u32>() {
        return 0.0;
    }
    let mut ln = linalg::ln_factorial(k as u64);
    let mut sgn = 1.0;
    for (&m, &x) in mu.iter().zip(r) {
        if m == 0 {
            continue;
        }
        if x == 0.0 {
            return 0.0;
        }
        ln += m as f64 * x.abs().ln() - 0.5 * linalg::ln_factorial(m as u64);
        if x < 0.0 && m % 2 == 1 {
            sgn = -sgn;
        }
    }
    for (&m, &x) in nu.iter().zip(c) {
        if m == 0 {
            continue;
        }
        if x == 0.0 {
            return 0.0;
        }
        ln += m as f64 * x.abs().ln() - 0.5 * linalg::ln_factorial(m as u64);
        if x < 0.0 && m % 2 == 1 {
            sgn = -sgn;
        }
    }
    sgn * ln.exp()
}

/// `C(N + D, D)`, saturating.
pub fn multi_index_count(coords: u64, d: u64) -> u64 {
    let mut acc: u128 = 1;
    for i in 1..=d as u128 {
        acc = acc * (coords as u128 + i) / i;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// All compositions of `total` into `len` nonnegative parts.
fn compositions(len: usize, total: u32, out: &mut Vec<Vec<u32>>) {
    fn rec(cur: &mut Vec<u32>, idx: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if idx + 1 == cur.len() {
            cur[idx] = left;
            out.push(cur.clone());
            cur[idx] = 0;
            return;
        }
        for v in (0..=left).rev() {
            cur[idx] = v;
            rec(cur, idx + 1, left - v, out);
        }
        cur[idx] = 0;
    }
    if len == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return;
    }
    rec(&mut vec![0; len], 0, total, out);
}

/// Factors of one draw on the shared blocks.
struct Factors {
    r: Vec<f64>,
    c: Vec<f64>,
}

/// `||L^{<=D} - 1||^2 + 1` of the empirical mixture over `draws`, against
/// the alternative point with the same `sigma_star`, for `n` rows.
///
/// All draws must come from one prior so that they share coordinate blocks.
pub fn ld_norm(draws: &[PriorDraw], d: usize, n: usize) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no prior draws".into()));
    }
    let (ui, _, vi, _) = draws[0].rank_one_factors();
    let coords = (n as u64) * (draws[0].p as u64 + 1);
    let count = multi_index_count(coords, d as u64);
    if count > SIZE_BUDGET {
        return Err(Error::SizeBudget(count));
    }
    let mut fac = Vec::with_capacity(draws.len());
    for dr in draws {
        check_unit_diagonal(dr)?;
        let (u, r, v, c) = dr.rank_one_factors();
        if u != ui || v != vi {
            return Err(Error::InvalidInput("draws do not share coordinate blocks".into()));
        }
        fac.push(Factors { r, c });
    }
    // per-row balanced multi-indices of each even degree, with their moments per draw
    let mut levels: Vec<Vec<Vec<f64>>> = vec![Vec::new(); d / 2 + 1];
    for (k, level) in levels.iter_mut().enumerate().skip(1) {
        let mut mus = Vec::new();
        compositions(ui.len(), k as u32, &mut mus);
        let mut nus = Vec::new();
        compositions(vi.len(), k as u32, &mut nus);
        for mu in &mus {
            for nu in &nus {
                level.push(fac.iter().map(|f| hermite_moment(mu, nu, &f.r, &f.c)).collect());
            }
        }
    }
    let ones = vec![1.0; fac.len()];
    let mut total = 0.0;
    rows_rec(&levels, n, d / 2, &ones, &mut total);
    Ok(total)
}

// Walks every assignment of a balanced pattern (or none) to each row.
fn rows_rec(levels: &[Vec<Vec<f64>>], rows_left: usize, half_left: usize, prod: &[f64], total: &mut f64) {
    if rows_left == 0 {
        let m = prod.iter().sum::<f64>() / prod.len() as f64;
        *total += m * m;
        return;
    }
    // this row at degree zero
    rows_rec(levels, rows_left - 1, half_left, prod, total);
    for k in 1..=half_left {
        for pattern in &levels[k] {
            let next: Vec<f64> = prod.iter().zip(pattern).map(|(a, b)| a * b).collect();
            rows_rec(levels, rows_left - 1, half_left - k, &next, total);
        }
    }
}

/// The rescaled joint covariance must have unit diagonal.
fn check_unit_diagonal(d: &PriorDraw) -> Result<()> {
    let z = d.joint().sigma_z;
    let s2 = d.sigma_star * d.sigma_star;
    let ok = (z[(0, 0)] / s2 - 1.0).abs() <= 1e-12 && (1..z.nrows()).all(|i| (z[(i, i)] - 1.0).abs() <= 1e-12);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput("rescaled joint covariance lacks a unit diagonal".into()))
    }
}

/// `ln 9 + 4 D ln(6 n p D)`, the log of the uniform-weight bound.
pub fn ld_uniform_bound(n: usize, p: usize, d: usize) -> f64 {
    9f64.ln() + 4.0 * d as f64 * (6.0 * n as f64 * p as f64 * d as f64).ln()
}

/// `(1/K^2) sum_{k,l} I(k, l) - 1` over all ordered pairs, diagonal included.
pub fn empirical_chi2(draws: &[PriorDraw], n: usize) -> Result<f64> {
    let base = priors::alternative_point(draws[0].p, draws[0].sigma_star);
    let joints: Vec<_> = draws.iter().map(|d| d.joint()).collect();
    let k = joints.len() as f64;
    let mut s = 0.0;
    for a in &joints {
        for b in &joints {
            s += priors::chi2_pair_integral(a, b, &base, n)?;
        }
    }
    Ok(s / (k * k) - 1.0)
}
