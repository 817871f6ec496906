//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor, retrying once with diagonal jitter `1e-12 * trace / p`.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let p = m.nrows().max(1);
    let jitter = 1e-12 * m.trace().abs() / p as f64;
    let mut bumped = m.clone();
    for i in 0..m.nrows() {
        bumped[(i, i)] += jitter;
    }
    Cholesky::new(bumped).ok_or(Error::CholeskyFailure)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let ev = sym_eigenvalues(m);
    ev[0].abs().max(ev[ev.len() - 1].abs())
}

/// Spectral norm of a general matrix (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // eigen of the smaller Gram matrix
    let g = if m.nrows() <= m.ncols() { m * m.transpose() } else { m.transpose() * m };
    sym_op_norm(&g).max(0.0).sqrt()
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = cholesky_jitter(m)?;
    Ok(c.inverse())
}

/// Natural log of |det m| and the sign of the determinant, via LU.
pub fn log_abs_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = 1.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log += d.abs().ln();
    }
    sign *= lu.p().determinant::<f64>();
    (log, sign)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn to_dvec(a: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(a)
}

/// Log of `n!` via log-gamma.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}
