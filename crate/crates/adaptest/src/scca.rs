//! Sparse canonical correlation detection and its reduction to functional testing.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, LoadingVector, TestProblem};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SccaParams {
    /// Half the number of rows.
    pub n: usize,
    pub s: usize,
    pub p1: usize,
    pub p2: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// `2n` rows of `(U1, U2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SccaInstance {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub params: SccaParams,
    pub hypothesis: Hypothesis,
    /// Supports of the planted directions under the alternative.
    pub support1: Vec<usize>,
    pub support2: Vec<usize>,
}

impl SccaInstance {
    pub fn rows(&self) -> usize {
        self.u1.nrows()
    }

    /// `(2n)^{-1} sum_i U1_i U2_i'`.
    pub fn cross_cov(&self) -> DMatrix<f64> {
        self.u1.transpose() * &self.u2 / self.rows() as f64
    }
}

/// Sample an instance. Under the alternative the directions are uniform
/// `s`-sparse with entries `1 / sqrt(s)`.
pub fn gen_scca(params: SccaParams, hypothesis: Hypothesis, seed: u64) -> Result<SccaInstance> {
    let SccaParams { n, s, p1, p2, lambda } = params;
    if n == 0 || s == 0 || s > p1 || s > p2 {
        return Err(Error::InvalidInput("need n >= 1 and 1 <= s <= min(p1, p2)".into()));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::NotPositiveDefinite(format!("canonical correlation {lambda}")));
    }
    let rows = 2 * n;
    let mut r = rng::stream(seed, 7);
    let (support1, support2) = match hypothesis {
        Hypothesis::Null => (Vec::new(), Vec::new()),
        Hypothesis::Alternative => (rng::sample_subset(&mut r, p1, s), rng::sample_subset(&mut r, p2, s)),
    };
    let mut u1 = DMatrix::zeros(rows, p1);
    let mut u2 = DMatrix::zeros(rows, p2);
    let w = 1.0 / (s as f64).sqrt();
    // U2 = lambda (d1'U1) d2 + (I - a d2 d2') Z with a = 1 - sqrt(1 - lambda^2)
    let a = 1.0 - (1.0 - lambda * lambda).sqrt();
    for i in 0..rows {
        for j in 0..p1 {
            u1[(i, j)] = StandardNormal.sample(&mut r);
        }
        for j in 0..p2 {
            u2[(i, j)] = StandardNormal.sample(&mut r);
        }
        if hypothesis == Hypothesis::Alternative {
            let proj1: f64 = support1.iter().map(|&j| u1[(i, j)] * w).sum();
            let proj2: f64 = support2.iter().map(|&j| u2[(i, j)] * w).sum();
            for &j in &support2 {
                u2[(i, j)] += (lambda * proj1 - a * proj2) * w;
            }
        }
    }
    Ok(SccaInstance { u1, u2, params, hypothesis, support1, support2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Scan,
    Entrywise,
    MaxCol,
    MaxRow,
    GlobalSum,
}

impl Statistic {
    pub const ALL: [Statistic; 5] =
        [Statistic::Scan, Statistic::Entrywise, Statistic::MaxCol, Statistic::MaxRow, Statistic::GlobalSum];

    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::Scan => "scan",
            Statistic::Entrywise => "entrywise",
            Statistic::MaxCol => "max_col",
            Statistic::MaxRow => "max_row",
            Statistic::GlobalSum => "global_sum",
        }
    }
}

/// Default cap on the number of row subsets the scan visits.
pub const SCAN_CAP: u64 = 10_000_000;

fn ln_choose(a: usize, b: usize) -> f64 {
    linalg::ln_factorial(a as u64) - linalg::ln_factorial(b as u64) - linalg::ln_factorial((a - b) as u64)
}

/// Maximum over `s x s` blocks of the block average of `r_hat`.
pub fn scan(r_hat: &DMatrix<f64>, s: usize, cap: u64) -> Result<f64> {
    let (p1, p2) = r_hat.shape();
    let subsets = ln_choose(p1, s).exp();
    if subsets > cap as f64 {
        return Err(Error::ScanBudgetExceeded(subsets.round() as u64));
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..s).collect();
    let mut sums = vec![0.0; p2];
    loop {
        for (j, v) in sums.iter_mut().enumerate() {
            *v = idx.iter().map(|&i| r_hat[(i, j)]).sum();
        }
        // for fixed rows the best columns are the s largest column sums
        sums.sort_by(|a, b| b.total_cmp(a));
        let v: f64 = sums[..s].iter().sum();
        best = best.max(v);
        if !next_subset(&mut idx, p1) {
            break;
        }
    }
    Ok(best / (s * s) as f64)
}

fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub fn entrywise(r_hat: &DMatrix<f64>) -> f64 {
    r_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `max_j (1/s) sum_i r_hat[i, j]`.
pub fn max_col(r_hat: &DMatrix<f64>, s: usize) -> f64 {
    r_hat.row_sum().iter().copied().fold(f64::NEG_INFINITY, f64::max) / s as f64
}

/// `max_i (1/s) sum_j r_hat[i, j]`.
pub fn max_row(r_hat: &DMatrix<f64>, s: usize) -> f64 {
    r_hat.column_sum().iter().copied().fold(f64::NEG_INFINITY, f64::max) / s as f64
}

pub fn global_sum(r_hat: &DMatrix<f64>) -> f64 {
    r_hat.mean()
}

pub fn statistic(stat: Statistic, r_hat: &DMatrix<f64>, s: usize) -> Result<f64> {
    Ok(match stat {
        Statistic::Scan => scan(r_hat, s, SCAN_CAP)?,
        Statistic::Entrywise => entrywise(r_hat),
        Statistic::MaxCol => max_col(r_hat, s),
        Statistic::MaxRow => max_row(r_hat, s),
        Statistic::GlobalSum => global_sum(r_hat),
    })
}

/// Theoretical thresholds with a common constant.
pub fn threshold(stat: Statistic, n: usize, s: usize, p1: usize, p2: usize, c: f64) -> f64 {
    let (nf, sf, a, b) = (n as f64, s as f64, p1 as f64, p2 as f64);
    match stat {
        Statistic::Scan => c * ((ln_choose(p1, s) + ln_choose(p2, s)) / (nf * sf * sf)).sqrt(),
        Statistic::Entrywise => c * ((a * b).ln() / nf).sqrt(),
        Statistic::MaxCol => c * (a * b.ln() / (nf * sf * sf)).sqrt(),
        Statistic::MaxRow => c * (b * a.ln() / (nf * sf * sf)).sqrt(),
        Statistic::GlobalSum => c * (1.0 / (nf * a * b)).sqrt(),
    }
}

/// Detection boundary of each statistic, in units of the canonical correlation.
pub fn boundary(stat: Statistic, n: usize, s: usize, p1: usize, p2: usize) -> f64 {
    let (nf, sf, a, b) = (n as f64, s as f64, p1 as f64, p2 as f64);
    match stat {
        Statistic::Scan => (sf * b.ln() / nf).sqrt(),
        Statistic::Entrywise => sf * (b.ln() / nf).sqrt(),
        Statistic::MaxCol => (a * b.ln() / nf).sqrt(),
        Statistic::MaxRow => (b * a.ln() / nf).sqrt(),
        Statistic::GlobalSum => (a * b / (nf * sf * sf)).sqrt(),
    }
}

pub fn boundary_table(n: usize, s: usize, p1: usize, p2: usize) -> Vec<(Statistic, f64)> {
    Statistic::ALL.iter().map(|&st| (st, boundary(st, n, s, p1, p2))).collect()
}

/// Empirical `(1 - alpha)` quantile of a statistic under the null.
pub fn calibrate(stat: Statistic, params: SccaParams, alpha: f64, reps: usize, seed: u64) -> Result<f64> {
    use rayon::prelude::*;
    let null = SccaParams { lambda: 0.0, ..params };
    let mut vals = (0..reps)
        .into_par_iter()
        .map(|k| {
            let inst = gen_scca(null, Hypothesis::Null, rng::derive(seed, k as u64))?;
            statistic(stat, &inst.cross_cov(), params.s)
        })
        .collect::<Result<Vec<f64>>>()?;
    vals.sort_by(|a, b| a.total_cmp(b));
    let idx = (((1.0 - alpha) * reps as f64).ceil() as usize).clamp(1, reps) - 1;
    Ok(vals[idx])
}

/// `c10 sigma_star rho^2 k / ((2 - c10^2 rho^2) sqrt(p6))`.
pub fn tau_red(c10: f64, sigma_star: f64, rho: f64, k: usize, p6: usize) -> f64 {
    c10 * sigma_star * rho * rho * k as f64 / ((2.0 - c10 * c10 * rho * rho) * (p6 as f64).sqrt())
}

/// Output of the reduction: a regression dataset and the test it should decide.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub data: Dataset,
    pub problem: TestProblem,
    pub tau: f64,
}

/// Map an instance with `2n` rows to `n` regression rows on `p1 + p2` features.
///
/// Row pair `(2i, 2i + 1)` becomes one regression row. The loading is flat on
/// the first `p1` features and the implied sparsity bound is `4 s`.
pub fn reduce_to_lt(
    inst: &SccaInstance,
    sigma_star: f64,
    c10: f64,
    t0: f64,
    alpha: f64,
    eta: f64,
    seed: u64,
) -> Result<Reduction> {
    let rows = inst.rows();
    if rows % 2 == 1 {
        return Err(Error::OddPairCount(rows));
    }
    if !(c10 > 0.0 && c10 < 1.0) {
        return Err(Error::InvalidInput("c10 must lie in (0, 1)".into()));
    }
    let SccaParams { s, p1, p2, lambda, .. } = inst.params;
    let n = rows / 2;
    let p = p1 + p2;
    let tau = tau_red(c10, sigma_star, lambda, s, p1);
    let mut r = rng::stream(seed, 11);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let sq = (1.0 - c10 * c10).sqrt();
    let rp = (p1 as f64).sqrt();
    let beta0 = t0 - tau;
    for i in 0..n {
        let (a, b) = (2 * i, 2 * i + 1);
        let w1: f64 = (0..p1).map(|j| inst.u1[(b, j)]).sum::<f64>() / rp;
        y[i] = sigma_star * w1;
        for j in 0..p1 {
            let e: f64 = StandardNormal.sample(&mut r);
            x[(i, j)] = -c10 * inst.u1[(a, j)] + sq * e;
        }
        for j in 0..p2 {
            x[(i, p1 + j)] = (inst.u2[(a, j)] + inst.u2[(b, j)]) / 2f64.sqrt();
        }
        y[i] += x[(i, 0)] * beta0;
    }
    let mut load = vec![0.0; p];
    load[..p1].iter_mut().for_each(|v| *v = 1.0);
    let problem = TestProblem::new(LoadingVector::new(&load)?, t0, 4 * s, alpha, eta)?;
    Ok(Reduction { data: Dataset::new(x, y)?, problem, tau })
}
