//! Confidence intervals and the tests obtained by inverting them.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    self, project_with_radius, projection_radius, sample_cov, scaled_lasso_with, LassoOptions, ProjectionResult,
    ScaledLassoFit, SpikedCovFit, SpikedOptions,
};
use crate::linalg;
use crate::model::{Dataset, LoadingVector, TestProblem};
use crate::profile;
use crate::rng;

/// Symmetric interval with the error budget that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub radius: f64,
    pub level: f64,
    /// Named component error probabilities; they sum to `1 - level`.
    pub budget: Vec<(String, f64)>,
}

impl ConfidenceInterval {
    pub fn new(center: f64, radius: f64, name: &str, alpha: f64) -> Self {
        Self { center, radius, level: 1.0 - alpha, budget: vec![(name.to_string(), alpha)] }
    }

    pub fn contains(&self, t: f64) -> bool {
        (t - self.center).abs() <= self.radius
    }

    /// Interval sum; the levels combine by the union bound.
    pub fn minkowski(&self, other: &ConfidenceInterval) -> ConfidenceInterval {
        let mut budget = self.budget.clone();
        budget.extend(other.budget.iter().cloned());
        ConfidenceInterval {
            center: self.center + other.center,
            radius: self.radius + other.radius,
            level: 1.0 - (1.0 - self.level) - (1.0 - other.level),
            budget,
        }
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub reject: bool,
    pub interval: ConfidenceInterval,
    pub m_used: usize,
    pub t0: f64,
    /// False when the debiasing program had no feasible point.
    pub projection_feasible: bool,
}

impl TestDecision {
    pub fn from_interval(interval: ConfidenceInterval, t0: f64, m_used: usize, feasible: bool) -> Self {
        let reject = (t0 - interval.center).abs() > interval.radius;
        Self { reject, interval, m_used, t0, projection_feasible: feasible }
    }
}

/// Tuning constants shared by the interval constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub c_xi: f64,
    pub c_beta: f64,
    pub c_pi: f64,
    /// Pick `m` by minimising the realised radius over a 32-point grid.
    pub scan_all_m: bool,
    pub lasso: LassoOptions,
    /// Constants of the known-covariance radius.
    pub c2: f64,
    pub c3: f64,
    /// Constants of the spiked radius.
    pub c_spike: f64,
    pub c_spike_bias: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            c_xi: estimators::DEFAULT_C_XI,
            c_beta: estimators::DEFAULT_C_BETA,
            c_pi: 1.1 * estimators::DEFAULT_C_BETA,
            scan_all_m: false,
            lasso: LassoOptions::default(),
            c2: 1.0,
            c3: 1.0,
            c_spike: 1.0,
            c_spike_bias: 1.0,
        }
    }
}

/// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative).
pub fn normal_quantile(prob: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "probability must lie in (0, 1)");
    let q = prob - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r0 = if q < 0.0 { prob } else { 1.0 - prob };
    let mut r = (-r0.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1_971.590_950_306_551_3,
    13_731.693_765_509_461,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_13,
    2_509.080_928_730_122_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_597,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_545,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_100_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_888,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.043_631_033_808_640_4e-15,
];

/// `xi' beta_hat` with radius `C_pi sigma_hat |xi|_inf k_u sqrt(ln p / n)`.
pub fn plugin_ci(fit: &ScaledLassoFit, xi: &[f64], k_u: usize, n: usize, alpha: f64, c_pi: f64) -> ConfidenceInterval {
    let p = xi.len();
    let center = linalg::dot(xi, fit.beta_hat.as_slice());
    let radius = c_pi * fit.sigma_hat * linalg::norm_inf(xi) * k_u as f64 * ((p as f64).ln() / n as f64).sqrt();
    ConfidenceInterval::new(center, radius, "plugin", alpha)
}

/// Debiased interval for `xi' beta` given the direction `proj`.
#[allow(clippy::too_many_arguments)]
pub fn debiased_ci(
    data: &Dataset,
    fit: &ScaledLassoFit,
    proj: &ProjectionResult,
    xi: &[f64],
    k_u: usize,
    alpha: f64,
    c_xi: f64,
    c_beta: f64,
) -> ConfidenceInterval {
    let (n, p) = (data.n(), data.p());
    let nf = n as f64;
    let resid = &data.y - &data.x * &fit.beta_hat;
    let correction = if proj.feasible && proj.u_hat.iter().any(|v| *v != 0.0) {
        (&data.x * &proj.u_hat).dot(&resid) / nf
    } else {
        0.0
    };
    let center = linalg::dot(xi, fit.beta_hat.as_slice()) + correction;
    let z = normal_quantile(1.0 - alpha / 8.0);
    let lp = (p as f64).ln();
    let radius = 1.1
        * fit.sigma_hat
        * (proj.objective.sqrt() / nf.sqrt() * z + c_beta * c_xi * linalg::norm2(xi) * k_u as f64 * lp / nf);
    ConfidenceInterval::new(center, radius, "debiased", alpha)
}

/// Data-dependent pieces reused across cutoffs of one replicate.
pub struct MixedContext<'a> {
    pub data: &'a Dataset,
    pub fit: ScaledLassoFit,
    pub sigma_hat: DMatrix<f64>,
}

impl<'a> MixedContext<'a> {
    pub fn new(data: &'a Dataset, opts: &InferenceOptions) -> Result<Self> {
        let fit = scaled_lasso_with(data, &opts.lasso)?;
        let sigma_hat = sample_cov(data);
        Ok(Self { data, fit, sigma_hat })
    }

    pub fn from_parts(data: &'a Dataset, fit: ScaledLassoFit, sigma_hat: DMatrix<f64>) -> Self {
        Self { data, fit, sigma_hat }
    }

    /// Debiased part on the top `m` coordinates plus plug-in on the rest,
    /// each at component error `alpha_component`.
    pub fn mixed_ci(
        &self,
        xi: &LoadingVector,
        m: usize,
        k_u: usize,
        alpha_component: f64,
        opts: &InferenceOptions,
    ) -> (ConfidenceInterval, ProjectionResult) {
        let (n, p) = (self.data.n(), self.data.p());
        let (head, tail) = xi.split_top(m);
        let radius = projection_radius(linalg::norm2(&head), opts.c_xi, n, p);
        let proj = project_with_radius(&self.sigma_hat, &head, radius);
        let db = debiased_ci(self.data, &self.fit, &proj, &head, k_u, alpha_component, opts.c_xi, opts.c_beta);
        let pi = plugin_ci(&self.fit, &tail, k_u, n, alpha_component, opts.c_pi);
        (db.minkowski(&pi), proj)
    }

    /// Cutoff grid used by the radius scan: 32 log-spaced points including 0 and p.
    pub fn m_grid(p: usize) -> Vec<usize> {
        let mut g = vec![0, p];
        for i in 0..30 {
            let t = (i as f64 + 1.0) / 31.0;
            g.push(((p as f64 + 1.0).powf(t) - 1.0).round() as usize);
        }
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Cutoff from the loading profile, or the radius minimiser when scanning.
    pub fn choose_m(&self, xi: &LoadingVector, k_u: usize, alpha_component: f64, opts: &InferenceOptions) -> usize {
        let (n, p) = (self.data.n(), self.data.p());
        let (_, m_star) = profile::cutoff(k_u, n, p);
        if !opts.scan_all_m {
            return m_star;
        }
        let mut grid = Self::m_grid(p);
        grid.push(m_star);
        grid.sort_unstable();
        grid.dedup();
        let mut best = (f64::INFINITY, 0);
        let mut last_head: Option<(usize, f64)> = None;
        for m in grid {
            // cutoffs past the support give the same split; reuse the previous radius
            let eff = m.min(xi.k_xi());
            let r = match last_head {
                Some((e, r)) if e == eff => r,
                _ => self.mixed_ci(xi, eff, k_u, alpha_component, opts).0.radius,
            };
            last_head = Some((eff, r));
            if r < best.0 {
                best = (r, m);
            }
        }
        best.1
    }
}

/// Component error `min(alpha, eta) / 4`.
pub fn component_alpha(alpha: f64, eta: f64) -> f64 {
    alpha.min(eta) / 4.0
}

pub fn mixed_ci(
    data: &Dataset,
    fit: &ScaledLassoFit,
    xi: &LoadingVector,
    m: usize,
    k_u: usize,
    alpha_component: f64,
    opts: &InferenceOptions,
) -> ConfidenceInterval {
    let ctx = MixedContext::from_parts(data, fit.clone(), sample_cov(data));
    ctx.mixed_ci(xi, m, k_u, alpha_component, opts).0
}

/// Reject iff `t0` falls outside the mixed interval at the chosen cutoff.
pub fn mixed_test(data: &Dataset, problem: &TestProblem, opts: &InferenceOptions) -> Result<TestDecision> {
    let ctx = MixedContext::new(data, opts)?;
    Ok(mixed_test_with(&ctx, problem, opts))
}

pub fn mixed_test_with(ctx: &MixedContext<'_>, problem: &TestProblem, opts: &InferenceOptions) -> TestDecision {
    let a = component_alpha(problem.alpha, problem.eta);
    let m = ctx.choose_m(&problem.xi, problem.k_u, a, opts);
    let (ci, proj) = ctx.mixed_ci(&problem.xi, m, problem.k_u, a, opts);
    TestDecision::from_interval(ci, problem.t0, m, proj.feasible)
}

/// Seeded shuffle, then the first and second halves.
pub fn split_halves(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n % 2 == 1 {
        return Err(Error::OddSampleSize(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, 0x5eed_0001);
    idx.shuffle(&mut r);
    let second = idx.split_off(n / 2);
    Ok((idx, second))
}

/// Center `xi' b + xi' W X2' (Y2 - X2 b) / n2` for a weight matrix `W`.
fn split_center(fit: &ScaledLassoFit, half2: &Dataset, weight: &DMatrix<f64>, xi: &[f64]) -> f64 {
    let n2 = half2.n() as f64;
    let resid = &half2.y - &half2.x * &fit.beta_hat;
    let wxi = weight.tr_mul(&DVector::from_column_slice(xi));
    linalg::dot(xi, fit.beta_hat.as_slice()) + (&half2.x * wxi).dot(&resid) / n2
}

/// Interval with known design covariance `sigma0`, using sample splitting.
#[allow(clippy::too_many_arguments)]
pub fn known_sigma_ci(
    data: &Dataset,
    sigma0: &DMatrix<f64>,
    xi: &[f64],
    _k_u: usize,
    alpha: f64,
    seed: u64,
    opts: &InferenceOptions,
) -> Result<ConfidenceInterval> {
    let (h1, h2) = split_halves(data.n(), seed)?;
    let (d1, d2) = (data.select_rows(&h1), data.select_rows(&h2));
    let fit = scaled_lasso_with(&d1, &opts.lasso)?;
    let omega = linalg::spd_inverse(sigma0)?;
    let center = split_center(&fit, &d2, &omega, xi);
    let radius = 1.1 * (opts.c2 + opts.c3) * linalg::norm2(xi) * fit.sigma_hat / (d2.n() as f64).sqrt();
    Ok(ConfidenceInterval::new(center, radius, "known_sigma", alpha))
}

/// Interval using the spiked precision estimate from the first half.
pub fn spiked_ci_with_fit(
    fit: &ScaledLassoFit,
    half2: &Dataset,
    spiked: &SpikedCovFit,
    xi: &LoadingVector,
    k_u: usize,
    alpha: f64,
    opts: &InferenceOptions,
) -> ConfidenceInterval {
    let raw = xi.raw();
    let center = split_center(fit, half2, &spiked.omega_hat, &raw);
    let n2 = half2.n() as f64;
    let lp = (half2.p() as f64).ln();
    let radius = fit.sigma_hat
        * (opts.c_spike * xi.norm2() / n2.sqrt() + opts.c_spike_bias * profile::nu2(xi, k_u) * k_u as f64 * lp / n2);
    ConfidenceInterval::new(center, radius, "spiked", alpha)
}

/// Split, fit the Lasso and the spiked search on half one, center on half two.
pub fn spiked_ci(
    data: &Dataset,
    xi: &LoadingVector,
    k_u: usize,
    alpha: f64,
    seed: u64,
    opts: &InferenceOptions,
    spiked_opts: &SpikedOptions,
) -> Result<(ConfidenceInterval, SpikedCovFit)> {
    let (h1, h2) = split_halves(data.n(), seed)?;
    let (d1, d2) = (data.select_rows(&h1), data.select_rows(&h2));
    let fit = scaled_lasso_with(&d1, &opts.lasso)?;
    let sp = estimators::spiked_cov_estimate(&d1, k_u, spiked_opts)?;
    Ok((spiked_ci_with_fit(&fit, &d2, &sp, xi, k_u, alpha, opts), sp))
}
