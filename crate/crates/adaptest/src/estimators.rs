//! Scaled Lasso, sample covariance, the debiasing direction and the spiked covariance search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, LoadingVector};

/// Penalty multiplier inside the square root of the universal level.
pub const LASSO_PENALTY_FACTOR: f64 = 2.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLassoFit {
    pub beta_hat: DVector<f64>,
    pub sigma_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Joint objective after each outer round.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Lower bound applied to the noise estimate; zero disables it.
    pub sigma_floor: f64,
    pub max_outer: usize,
    pub tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { sigma_floor: 0.0, max_outer: 500, tol: 1e-8 }
    }
}

/// `sqrt(2.01 ln p / n)`.
pub fn universal_level(n: usize, p: usize) -> f64 {
    (LASSO_PENALTY_FACTOR * (p as f64).ln() / n as f64).sqrt()
}

pub fn scaled_lasso(data: &Dataset) -> Result<ScaledLassoFit> {
    scaled_lasso_with(data, &LassoOptions::default())
}

/// Joint objective `|r|^2 / (2 n s) + s / 2 + lambda0 sum w_j |b_j|`.
pub fn scaled_lasso_objective(data: &Dataset, beta: &DVector<f64>, sigma: f64) -> f64 {
    let n = data.n() as f64;
    let r = &data.y - &data.x * beta;
    let lam0 = universal_level(data.n(), data.p());
    let pen: f64 = (0..data.p())
        .map(|j| data.x.column(j).norm() / n.sqrt() * beta[j].abs())
        .sum();
    r.norm_squared() / (2.0 * n * sigma) + sigma / 2.0 + lam0 * pen
}

pub fn scaled_lasso_with(data: &Dataset, opts: &LassoOptions) -> Result<ScaledLassoFit> {
    let (n, p) = (data.n(), data.p());
    if n < 2 || p < 1 {
        return Err(Error::InvalidInput("scaled lasso needs n >= 2 and p >= 1".into()));
    }
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| data.x.column(j).norm_squared() / nf).collect();
    if col_sq.iter().all(|c| *c == 0.0) {
        return Err(Error::InvalidInput("all design columns are zero".into()));
    }
    let weights: Vec<f64> = col_sq.iter().map(|c| c.sqrt()).collect();
    let lam0 = universal_level(n, p);
    let mut beta = DVector::zeros(p);
    let mut resid = data.y.clone();
    let mut sigma = resid.norm() / nf.sqrt();
    if sigma == 0.0 {
        if opts.sigma_floor > 0.0 {
            return Ok(ScaledLassoFit {
                beta_hat: beta,
                sigma_hat: opts.sigma_floor,
                iterations: 0,
                converged: true,
                objective_trace: Vec::new(),
            });
        }
        return Err(Error::ZeroResidualDegenerate);
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_outer {
        it += 1;
        lasso_cd(data, &col_sq, &weights, sigma * lam0, &mut beta, &mut resid);
        let mut next = resid.norm() / nf.sqrt();
        if next == 0.0 && opts.sigma_floor <= 0.0 {
            return Err(Error::ZeroResidualDegenerate);
        }
        next = next.max(opts.sigma_floor);
        trace.push(scaled_lasso_objective(data, &beta, next));
        let done = (next - sigma).abs() <= opts.tol * sigma;
        sigma = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(ScaledLassoFit { beta_hat: beta, sigma_hat: sigma, iterations: it, converged, objective_trace: trace })
}

/// Cyclic coordinate descent for `|Y - X b|^2 / (2n) + pen sum w_j |b_j|`, warm started.
fn lasso_cd(
    data: &Dataset,
    col_sq: &[f64],
    weights: &[f64],
    pen: f64,
    beta: &mut DVector<f64>,
    resid: &mut DVector<f64>,
) {
    let p = data.p();
    let scale = col_sq.iter().fold(0.0_f64, |m, c| m.max(*c)).sqrt();
    let tol = 1e-12 * scale.max(1e-300);
    for _ in 0..10_000 {
        let full = cd_sweep(data, col_sq, weights, pen, 0..p, beta, resid);
        if full <= tol {
            return;
        }
        // settle the active set before the next full pass
        for _ in 0..10_000 {
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            if cd_sweep(data, col_sq, weights, pen, active.into_iter(), beta, resid) <= tol {
                break;
            }
        }
    }
}

/// One pass over `idx`; returns the largest scaled coordinate move.
fn cd_sweep(
    data: &Dataset,
    col_sq: &[f64],
    weights: &[f64],
    pen: f64,
    idx: impl Iterator<Item = usize>,
    beta: &mut DVector<f64>,
    resid: &mut DVector<f64>,
) -> f64 {
    let nf = data.n() as f64;
    let mut moved = 0.0_f64;
    for j in idx {
        if col_sq[j] == 0.0 {
            continue;
        }
        let xj = data.x.column(j);
        let z = xj.dot(resid) / nf + col_sq[j] * beta[j];
        let new = soft(z, pen * weights[j]) / col_sq[j];
        let delta = new - beta[j];
        if delta != 0.0 {
            resid.axpy(-delta, &xj, 1.0);
            beta[j] = new;
            moved = moved.max(delta.abs() * weights[j]);
        }
    }
    moved
}

pub fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `X' X / n`, filled symmetrically.
pub fn sample_cov(data: &Dataset) -> DMatrix<f64> {
    let n = data.n() as f64;
    let mut s = data.x.tr_mul(&data.x) / n;
    // exact symmetry regardless of the product kernel
    for i in 0..s.nrows() {
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub u_hat: DVector<f64>,
    pub feasible: bool,
    pub radius: f64,
    pub objective: f64,
    pub sweeps: usize,
}

/// Default constraint multiplier for the debiasing direction.
pub const DEFAULT_C_XI: f64 = 2.0;
/// Default bias multiplier in the debiased radius.
pub const DEFAULT_C_BETA: f64 = 4.0;

/// `C_xi |xi|_2 sqrt(ln p / n)`.
pub fn projection_radius(xi_norm2: f64, c_xi: f64, n: usize, p: usize) -> f64 {
    c_xi * xi_norm2 * ((p as f64).ln() / n as f64).sqrt()
}

pub fn projection_direction(
    sigma_hat: &DMatrix<f64>,
    xi: &LoadingVector,
    c_xi: f64,
    n: usize,
) -> ProjectionResult {
    let raw = xi.raw();
    let radius = projection_radius(xi.norm2(), c_xi, n, raw.len());
    project_with_radius(sigma_hat, &raw, radius)
}

/// Minimise `u' S u` subject to `|S u - xi|_inf <= radius`.
///
/// Solved through `min_v v' S v / 2 - xi' v + radius |v|_1`, whose minimiser is
/// also primal optimal. Infeasible problems make the dual unbounded; those
/// return `u = 0` with `feasible = false`.
pub fn project_with_radius(s: &DMatrix<f64>, xi: &[f64], radius: f64) -> ProjectionResult {
    let p = xi.len();
    let tol = 1e-9 * linalg::norm2(xi).max(1.0);
    let mut v = DVector::zeros(p);
    let mut g = DVector::zeros(p); // S v
    let mut sweeps = 0;
    let blowup = 1e12 * linalg::norm2(xi).max(1.0)
        / s.diagonal().iter().filter(|d| **d > 0.0).fold(f64::INFINITY, |m, d| m.min(*d)).max(1e-300);
    let max_sweeps = 20_000;
    let mut diverged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        for j in 0..p {
            let d = s[(j, j)];
            if d <= 0.0 {
                continue;
            }
            let z = xi[j] - (g[j] - d * v[j]);
            let new = soft(z, radius) / d;
            let delta = new - v[j];
            if delta != 0.0 {
                g.axpy(delta, &s.column(j), 1.0);
                v[j] = new;
            }
        }
        if kkt_violation(&v, &g, xi, radius, s) <= tol {
            break;
        }
        if v.amax() > blowup {
            diverged = true;
            break;
        }
    }
    let feasible = !diverged && (0..p).all(|j| (g[j] - xi[j]).abs() <= radius * (1.0 + 1e-8) + 1e-15);
    if !feasible {
        return ProjectionResult { u_hat: DVector::zeros(p), feasible: false, radius, objective: 0.0, sweeps };
    }
    let objective = v.dot(&g).max(0.0);
    ProjectionResult { u_hat: v, feasible: true, radius, objective, sweeps }
}

fn kkt_violation(v: &DVector<f64>, g: &DVector<f64>, xi: &[f64], r: f64, s: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..xi.len() {
        let grad = g[j] - xi[j];
        let viol = if v[j] > 0.0 {
            (grad + r).abs()
        } else if v[j] < 0.0 {
            (grad - r).abs()
        } else if s[(j, j)] <= 0.0 {
            // this coordinate cannot move; only feasibility matters
            (grad.abs() - r).max(0.0)
        } else {
            (grad.abs() - r).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

/// `A` on `B x B`, ones on the remaining diagonal, zero elsewhere.
pub fn gamma_b(a: &DMatrix<f64>, b: &[usize]) -> DMatrix<f64> {
    let p = a.nrows();
    let mut out = DMatrix::identity(p, p);
    for &i in b {
        for &j in b {
            out[(i, j)] = a[(i, j)];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedCovFit {
    pub sigma_hat_spike: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub b_hat: Vec<usize>,
    pub fell_back_identity: bool,
    pub combinations_checked: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikedOptions {
    pub gamma_star: f64,
    pub m1: f64,
    pub combination_cap: u64,
}

impl Default for SpikedOptions {
    fn default() -> Self {
        Self { gamma_star: 3.0, m1: 10.0, combination_cap: 10_000_000 }
    }
}

/// Visit every subset of `pool` with at most `kmax` elements, ordered by size then lexicographically.
/// Stops early and returns `true` as soon as `f` returns `true`.
pub fn for_each_subset<F: FnMut(&[usize]) -> bool>(pool: &[usize], kmax: usize, mut f: F) -> bool {
    let n = pool.len();
    for k in 0..=kmax.min(n) {
        let mut idx: Vec<usize> = (0..k).collect();
        let mut set = vec![0; k];
        loop {
            for (s, &i) in set.iter_mut().zip(&idx) {
                *s = pool[i];
            }
            if f(&set) {
                return true;
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    false
}

/// Advance `idx` to the next `k`-combination of `0..n` in lexicographic order.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for t in i + 1..k {
                idx[t] = idx[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Exhaustive search over candidate spike supports.
pub fn spiked_cov_estimate(data: &Dataset, k_u: usize, opts: &SpikedOptions) -> Result<SpikedCovFit> {
    if data.n() < 2 {
        return Err(Error::InvalidInput("spiked estimator needs n >= 2".into()));
    }
    if opts.gamma_star < 3.0 {
        return Err(Error::InvalidInput("gamma_star must be at least 3".into()));
    }
    let s = sample_cov(data);
    spiked_from_cov(&s, data.n(), k_u, opts)
}

pub fn spiked_from_cov(s: &DMatrix<f64>, n: usize, k_u: usize, opts: &SpikedOptions) -> Result<SpikedCovFit> {
    let p = s.nrows();
    let nf = n as f64;
    let lp = (p as f64).ln();
    let all: Vec<usize> = (0..p).collect();
    let mut checked: u64 = 0;
    let mut over = false;
    let mut found: Option<Vec<usize>> = None;
    for_each_subset(&all, k_u, |b| {
        let gb_norm = linalg::sym_op_norm(&gamma_b(s, b));
        let rest: Vec<usize> = (0..p).filter(|i| !b.contains(i)).collect();
        let ok = !for_each_subset(&rest, k_u, |d| {
            checked += 1;
            if checked > opts.combination_cap {
                over = true;
                return true;
            }
            if d.is_empty() {
                return false;
            }
            let dd = d.len() as f64;
            let t = (dd / nf).sqrt() + (opts.gamma_star * dd * lp / nf).sqrt();
            let mut block = submatrix(s, d, d);
            for i in 0..d.len() {
                block[(i, i)] -= 1.0;
            }
            if linalg::sym_op_norm(&block) > 2.0 * t + t * t {
                return true;
            }
            if !b.is_empty() {
                let bound = gb_norm.sqrt() * ((dd / nf).sqrt() + (b.len() as f64 / nf).sqrt() + (opts.gamma_star * dd * lp / nf).sqrt());
                if linalg::op_norm(&submatrix(s, d, b)) > bound {
                    return true;
                }
            }
            false
        });
        if over {
            return true;
        }
        if ok {
            found = Some(b.to_vec());
            return true;
        }
        false
    });
    if over {
        return Err(Error::BudgetExceeded { cap: opts.combination_cap });
    }
    let (b_hat, fell_back) = match found {
        Some(b) => (b, false),
        None => (Vec::new(), true),
    };
    let mut spike = gamma_b(s, &b_hat);
    clip_block(&mut spike, &b_hat, opts.m1);
    let omega = if b_hat.is_empty() {
        DMatrix::identity(p, p)
    } else {
        let mut om = DMatrix::identity(p, p);
        let inv = linalg::spd_inverse(&submatrix(&spike, &b_hat, &b_hat))?;
        for (a, &i) in b_hat.iter().enumerate() {
            for (c, &j) in b_hat.iter().enumerate() {
                om[(i, j)] = inv[(a, c)];
            }
        }
        om
    };
    Ok(SpikedCovFit {
        sigma_hat_spike: spike,
        omega_hat: omega,
        b_hat,
        fell_back_identity: fell_back,
        combinations_checked: checked,
    })
}

/// Keep the `B x B` block's eigenvalues inside `[1/M1, M1]` so the inverse exists.
fn clip_block(m: &mut DMatrix<f64>, b: &[usize], m1: f64) {
    if b.is_empty() {
        return;
    }
    let block = submatrix(m, b, b);
    let eig = nalgebra::SymmetricEigen::new(block.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo >= 1.0 / m1 && hi <= m1 {
        return;
    }
    let clipped = eig.eigenvalues.map(|e| e.clamp(1.0 / m1, m1));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    for (a, &i) in b.iter().enumerate() {
        for (c, &j) in b.iter().enumerate() {
            m[(i, j)] = 0.5 * (fixed[(a, c)] + fixed[(c, a)]);
        }
    }
}
