//! Rate functionals of a loading vector.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoadingVector;
use crate::rng;

/// `sqrt` of the sum of the `ceil(t) ∧ p` largest squared coordinates.
pub fn top_norm(xi: &LoadingVector, t: f64) -> f64 {
    top_norm_count(xi, top_count(t, xi.len()))
}

/// `ceil(t) ∧ p` with `t = 0` mapping to zero.
pub fn top_count(t: f64, p: usize) -> usize {
    if t <= 0.0 {
        0
    } else if t >= p as f64 {
        p
    } else {
        (t.ceil() as usize).min(p)
    }
}

fn top_norm_count(xi: &LoadingVector, m: usize) -> f64 {
    xi.coords()[..m].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Distinct nonzero magnitudes with the log of their multiplicities.
fn magnitude_groups(xi: &LoadingVector) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for v in xi.coords().iter().map(|v| v.abs()).take_while(|v| *v != 0.0) {
        match out.last_mut() {
            Some(g) if g.0 == v => g.1 += 1,
            _ => out.push((v, 1)),
        }
    }
    out.into_iter().map(|(a, k)| (a, (k as f64).ln())).collect()
}

/// `ln sum_g exp(ln k_g + f(a_g))` with a max shift.
fn log_sum_exp_by(groups: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let mx = groups.iter().fold(f64::NEG_INFINITY, |m, &(a, lk)| m.max(lk + f(a)));
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + groups.iter().map(|&(a, lk)| (lk + f(a) - mx).exp()).sum::<f64>().ln()
}

fn ln_phi_groups(groups: &[(f64, f64)], zeta: f64) -> f64 {
    let num = log_sum_exp_by(groups, |a| a.ln() - zeta / (a * a));
    let den = log_sum_exp_by(groups, |a| 2.0 * a.ln() - zeta / (a * a));
    num - 0.5 * den
}

/// Log of the root function `sum |xi_j| e^{-z/xi_j^2} / sqrt(sum xi_j^2 e^{-z/xi_j^2})`.
pub fn ln_phi(xi: &LoadingVector, zeta: f64) -> f64 {
    ln_phi_groups(&magnitude_groups(xi), zeta)
}

pub fn phi(xi: &LoadingVector, zeta: f64) -> f64 {
    ln_phi(xi, zeta).exp()
}

/// Root of `phi(zeta) = k_u / 2` and `lambda = sqrt(zeta_+)`.
pub fn solve_zeta(xi: &LoadingVector, k_u: usize) -> Result<(f64, f64)> {
    if k_u == 0 {
        return Err(Error::InvalidInput("k_u must be positive".into()));
    }
    let target = (k_u as f64 / 2.0).ln();
    // tied magnitudes collapse into one term, which matters for flat profiles
    let groups = magnitude_groups(xi);
    let f = |z: f64| ln_phi_groups(&groups, z) - target;
    let a1 = xi.norm_inf();
    let scale = a1 * a1;
    let (mut lo, mut hi) = (-scale, scale);
    let mut grown = 0;
    while f(lo) < 0.0 {
        lo *= 2.0;
        grown += 1;
        if grown > 200 || !lo.is_finite() {
            return Err(Error::BracketFailure);
        }
    }
    grown = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        grown += 1;
        if grown > 200 || !hi.is_finite() {
            return Err(Error::BracketFailure);
        }
    }
    // bisect down to floating point resolution
    let floor = 1e-30 * scale;
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= floor {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let zeta = 0.5 * (lo + hi);
    Ok((zeta, zeta.max(0.0).sqrt()))
}

/// `lambda k_u + sqrt(sum xi_j^2 e^{-lambda^2 / xi_j^2})`.
pub fn nu1_at(xi: &LoadingVector, k_u: usize, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let s: f64 = xi
        .coords()
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v * v * (-l2 / (v * v)).exp())
        .sum();
    lambda * k_u as f64 + s.sqrt()
}

pub fn nu1(xi: &LoadingVector, k_u: usize) -> Result<f64> {
    let (_, lambda) = solve_zeta(xi, k_u)?;
    Ok(nu1_at(xi, k_u, lambda))
}

pub fn nu2(xi: &LoadingVector, k_u: usize) -> f64 {
    top_norm(xi, k_u as f64)
}

/// Largest (1-based) index with `|xi_j| >= lambda`, zero if none.
pub fn j1(xi: &LoadingVector, lambda: f64) -> usize {
    xi.coords().iter().take_while(|v| v.abs() >= lambda).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    UltraSparse,
    ModeratelySparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub zeta: f64,
    pub lambda: f64,
    pub j1: usize,
    pub nu1: f64,
    pub nu2: f64,
    pub k_eff: usize,
    pub nu3: f64,
    pub m_star: usize,
    pub regime: Regime,
}

/// `ceil(k_u^2 ln p) ∧ p` in the ultra-sparse regime, `ceil(n / ln p) ∧ p` otherwise.
pub fn cutoff(k_u: usize, n: usize, p: usize) -> (Regime, usize) {
    let lp = (p as f64).ln();
    let ku = k_u as f64;
    if ku <= (n as f64).sqrt() / lp {
        (Regime::UltraSparse, ((ku * ku * lp).ceil() as usize).min(p))
    } else {
        (Regime::ModeratelySparse, ((n as f64 / lp).ceil() as usize).min(p))
    }
}

/// `floor(n / ln p ∧ k_u^2 / (D ln p))`.
pub fn k_eff(k_u: usize, n: usize, p: usize, d: usize) -> usize {
    let lp = (p as f64).ln();
    let ku = k_u as f64;
    (n as f64 / lp).min(ku * ku / (d as f64 * lp)).floor() as usize
}

pub fn regime_and_cutoff(
    xi: &LoadingVector,
    k_u: usize,
    n: usize,
    p: usize,
    d: usize,
) -> Result<ProfileSummary> {
    if n < 2 || p < 2 || k_u == 0 || d == 0 {
        return Err(Error::InvalidInput("need n, p >= 2 and k_u, D >= 1".into()));
    }
    let (zeta, lambda) = solve_zeta(xi, k_u)?;
    let (regime, m_star) = cutoff(k_u, n, p);
    let ke = k_eff(k_u, n, p, d);
    Ok(ProfileSummary {
        zeta,
        lambda,
        j1: j1(xi, lambda),
        nu1: nu1_at(xi, k_u, lambda),
        nu2: nu2(xi, k_u),
        k_eff: ke,
        nu3: top_norm(xi, ke as f64),
        m_star,
        regime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBounds {
    pub upper: f64,
    pub lower: f64,
    /// Smallest minimiser of the upper-bound objective.
    pub best_m: usize,
}

/// Upper-bound objective at cutoff `m`, using prefix sums `prefix[m] = sum_{j<m} xi_j^2`.
pub fn upper_objective(xi: &LoadingVector, k_u: usize, n: usize, m: usize) -> f64 {
    let p = xi.len();
    let m = m.min(p);
    let h = top_norm_count(xi, m);
    let next = if m < p { xi.coords()[m].abs() } else { 0.0 };
    objective_terms(h, next, k_u, n, p)
}

fn objective_terms(h: f64, next: f64, k_u: usize, n: usize, p: usize) -> f64 {
    let lp = (p as f64).ln();
    let nf = n as f64;
    let ku = k_u as f64;
    h * (1.0 / nf.sqrt() + ku * lp / nf) + next * ku * (lp / nf).sqrt()
}

pub fn rate_bounds(xi: &LoadingVector, k_u: usize, n: usize, p: usize) -> Result<RateBounds> {
    let c = xi.coords();
    let mut best = f64::INFINITY;
    let mut best_m = 0;
    let mut acc = 0.0;
    for m in 0..=c.len() {
        if m > 0 {
            acc += c[m - 1] * c[m - 1];
        }
        let next = if m < c.len() { c[m].abs() } else { 0.0 };
        let v = objective_terms(acc.sqrt(), next, k_u, n, p);
        if v < best {
            best = v;
            best_m = m;
        }
    }
    let lp = (p as f64).ln();
    let nf = n as f64;
    let v1 = nu1(xi, k_u)?;
    let v2 = nu2(xi, k_u);
    let lower = (v1 / nf.sqrt()).max(v2 * k_u as f64 * lp / nf);
    Ok(RateBounds { upper: best, lower, best_m })
}

/// Region of the regular-loading phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    EasyL2,
    EasyLinf,
    SparseLoadingL2Inflated,
    ComputationalGap,
    StatisticallyImpossible,
}

impl PhaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::EasyL2 => "easy_l2",
            PhaseLabel::EasyLinf => "easy_linf",
            PhaseLabel::SparseLoadingL2Inflated => "sparse_loading_l2_inflated",
            PhaseLabel::ComputationalGap => "computational_gap",
            PhaseLabel::StatisticallyImpossible => "statistically_impossible",
        }
    }
}

pub const TAG_L2: &str = "‖ξ‖₂/√n";
pub const TAG_LINF: &str = "‖ξ‖_∞ k_u √(log p/n)";
pub const TAG_L2_INFLATED: &str = "‖ξ‖₂ k_u log p/n";
pub const TAG_GAP_LOWER: &str = "‖ξ‖_∞ [k_u^{3/2} log p/n + √(k_ξ/n)]";
pub const TAG_GAP_UPPER: &str = "‖ξ‖_∞ √(n/log p ∧ k_ξ) k_u log p/n";

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub label: PhaseLabel,
    pub tags: Vec<&'static str>,
    pub ultra_sparse: bool,
    /// Exponent of `sqrt(n) tau / ‖ξ‖_∞` above which efficient tests succeed.
    pub upper_curve: f64,
    /// Exponent below which detection is impossible.
    pub lower_curve: f64,
}

/// Loading-sparsity region for `k_xi = p^gx`, `k_u = p^gu`, `n = p^gn`.
pub fn regular_phase(gx: f64, gu: f64, gn: f64) -> Phase {
    let ultra = gu <= gn / 2.0;
    if ultra {
        let b = (gx / 2.0).min(gu);
        let (label, tag) = if gx <= 2.0 * gu {
            (PhaseLabel::EasyL2, TAG_L2)
        } else {
            (PhaseLabel::EasyLinf, TAG_LINF)
        };
        return Phase { label, tags: vec![tag], ultra_sparse: true, upper_curve: b, lower_curve: b };
    }
    let upper = (gx.min(gn) / 2.0 + gu - gn / 2.0).min(gu);
    let (label, tags, lower) = if gx <= gu {
        (PhaseLabel::SparseLoadingL2Inflated, vec![TAG_L2_INFLATED], gx / 2.0 + gu - gn / 2.0)
    } else if gx < 2.0 * gu {
        (
            PhaseLabel::ComputationalGap,
            vec![TAG_GAP_LOWER, TAG_GAP_UPPER],
            ((3.0 * gu - gn) / 2.0).max(gx / 2.0),
        )
    } else {
        (PhaseLabel::EasyLinf, vec![TAG_LINF], gu)
    };
    Phase { label, tags, ultra_sparse: false, upper_curve: upper, lower_curve: lower.min(upper) }
}

/// Label of one `(gamma_xi, gamma_tau)` cell of the phase diagram.
pub fn classify_cell(gx: f64, gt: f64, gu: f64, gn: f64) -> PhaseLabel {
    let ph = regular_phase(gx, gu, gn);
    if gt < ph.lower_curve {
        PhaseLabel::StatisticallyImpossible
    } else if gt < ph.upper_curve {
        PhaseLabel::ComputationalGap
    } else {
        ph.label
    }
}

/// Loading-profile generators.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    /// `k` coordinates equal to `a`, the rest zero.
    Regular { k: usize, a: f64, p: usize },
    /// `L` blocks of size `ceil(k_u l^2)` with magnitude `a / sqrt(m_l)`.
    Multiscale { k_u: usize, levels: usize, a: f64, p: usize, c0: f64 },
    /// Sorted i.i.d. magnitudes with tail `P(W > t) = exp(-t^q)`.
    SubWeibull { q: f64, p: usize },
}

pub fn example_profile(kind: &ProfileKind, seed: u64) -> Result<LoadingVector> {
    match *kind {
        ProfileKind::Regular { k, a, p } => {
            if k == 0 || k > p || a == 0.0 {
                return Err(Error::InvalidInput("regular profile needs 1 <= K <= p, a != 0".into()));
            }
            let mut v = vec![0.0; p];
            v[..k].iter_mut().for_each(|x| *x = a);
            LoadingVector::new(&v)
        }
        ProfileKind::Multiscale { k_u, levels, a, p, c0 } => {
            let l3 = (levels as f64).powi(3);
            if levels == 0 || l3 > c0 * k_u as f64 {
                return Err(Error::MultiscaleConstraint);
            }
            let sizes = multiscale_blocks(k_u, levels);
            let total: usize = sizes.iter().sum();
            if total > p {
                return Err(Error::InvalidInput(format!("multiscale support {total} exceeds p = {p}")));
            }
            let mut v = Vec::with_capacity(p);
            for &m in &sizes {
                v.extend(std::iter::repeat_n(a / (m as f64).sqrt(), m));
            }
            v.resize(p, 0.0);
            LoadingVector::new(&v)
        }
        ProfileKind::SubWeibull { q, p } => {
            if q <= 0.0 || p == 0 {
                return Err(Error::InvalidInput("sub-Weibull profile needs q > 0, p >= 1".into()));
            }
            let mut r = rng::stream(seed, 0);
            let v: Vec<f64> = (0..p).map(|_| sub_weibull_draw(&mut r, q)).collect();
            LoadingVector::new(&v)
        }
    }
}

/// Block sizes `ceil(k_u l^2)` for `l = 1..=L`.
pub fn multiscale_blocks(k_u: usize, levels: usize) -> Vec<usize> {
    (1..=levels).map(|l| k_u * l * l).collect()
}

fn sub_weibull_draw(r: &mut rng::Rng, q: f64) -> f64 {
    if q == 2.0 {
        // absolute Gaussian, the canonical q = 2 member
        let z: f64 = StandardNormal.sample(r);
        return z.abs();
    }
    let u: f64 = rand::Rng::random::<f64>(r);
    (-(1.0 - u).ln()).powf(1.0 / q)
}
