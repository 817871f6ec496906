//! Least-favourable prior samplers and chi-square oracles.
//!
//! Every prior here produces points whose design covariance is the identity
//! plus a symmetric rank-two term `r c' + c r'` with `r` and `c` on disjoint
//! coordinates, and whose response covariance with the design is `kappa c`.
//! That shared shape gives closed forms for `beta`, the noise level and the
//! spectrum, and exposes the rank-one factors the Hermite machinery needs.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{JointCovariance, LoadingVector, ModelParams};
use crate::profile;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Nu2,
    Nu1,
    Comp,
}

/// Constants of the three constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConstants {
    pub c1: f64,
    /// Defaults to `2 c1^2 / (9 sqrt 5)` when absent.
    pub c2: Option<f64>,
    pub c4: f64,
    pub c5: f64,
    pub c8: f64,
    /// Defaults to `c8^2 / (64 sqrt 2)` when absent.
    pub c9: Option<f64>,
    pub sigma_star: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        Self { c1: 0.05, c2: None, c4: 0.1, c5: 0.5, c8: 0.05, c9: None, sigma_star: 5.0, m1: 10.0, m2: 10.0 }
    }
}

impl PriorConstants {
    pub fn c2(&self) -> f64 {
        self.c2.unwrap_or(2.0 * self.c1 * self.c1 / (9.0 * 5f64.sqrt()))
    }

    pub fn c9(&self) -> f64 {
        self.c9.unwrap_or(self.c8 * self.c8 / (64.0 * 2f64.sqrt()))
    }

    /// `c4 c5 / 4`, the scale of the separation enforced by the identity-design prior.
    pub fn c6(&self) -> f64 {
        self.c4 * self.c5 / 4.0
    }
}

/// Per-draw diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawChecks {
    pub residual: f64,
    pub sparsity: usize,
    pub sparsity_cap: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    pub noise_sd: f64,
}

/// One sampled null parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub kind: PriorKind,
    /// Block vectors in the construction's own coordinates.
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub kappa: f64,
    pub tau: f64,
    pub sigma_star: f64,
    /// Design-side factor of the rank-two term, as (original index, value).
    pub r: Vec<(usize, f64)>,
    /// Factor carrying the response covariance, as (original index, value).
    pub c: Vec<(usize, f64)>,
    /// Nonzero coefficients as (original index, value).
    pub beta: Vec<(usize, f64)>,
    pub noise_sd: f64,
    pub p: usize,
    /// Original indices of the two coordinate blocks carrying `r` and `c`.
    pub u_block: Vec<usize>,
    pub v_block: Vec<usize>,
    pub valid: bool,
    /// `kappa = 0`: the draw collapsed onto the alternative point.
    pub degenerate: bool,
    pub issue: Option<Error>,
    pub checks: DrawChecks,
}

impl PriorDraw {
    pub fn beta_dense(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.p);
        for &(i, v) in &self.beta {
            b[i] = v;
        }
        b
    }

    pub fn sigma_cov(&self) -> DMatrix<f64> {
        let mut s = DMatrix::identity(self.p, self.p);
        for &(i, ri) in &self.r {
            for &(j, cj) in &self.c {
                s[(i, j)] += ri * cj;
                s[(j, i)] += ri * cj;
            }
        }
        s
    }

    pub fn theta(&self, m1: f64, m2: f64) -> ModelParams {
        ModelParams::new(self.beta_dense(), self.sigma_cov(), self.noise_sd).with_constants(m1, m2)
    }

    /// Joint covariance of `(Y, X)`, built directly from the factors.
    pub fn joint(&self) -> JointCovariance {
        let p = self.p;
        let mut z = DMatrix::identity(p + 1, p + 1);
        z[(0, 0)] = self.sigma_star * self.sigma_star;
        for &(j, cj) in &self.c {
            z[(0, j + 1)] = self.kappa * cj;
            z[(j + 1, 0)] = self.kappa * cj;
        }
        for &(i, ri) in &self.r {
            for &(j, cj) in &self.c {
                z[(i + 1, j + 1)] += ri * cj;
                z[(j + 1, i + 1)] += ri * cj;
            }
        }
        JointCovariance::new(z)
    }

    /// Rank-one factors after rescaling the response to unit variance.
    ///
    /// Returns `(u_index, r, v_index, c)` in joint coordinates (0 is the
    /// response) with `Cov(Z_u, Z_v) = r c'` and identity within each block.
    /// The blocks are fixed by the construction, so draws of one prior share them.
    pub fn rank_one_factors(&self) -> (Vec<usize>, Vec<f64>, Vec<usize>, Vec<f64>) {
        let lookup = |pairs: &[(usize, f64)], i: usize| pairs.iter().find(|e| e.0 == i).map_or(0.0, |e| e.1);
        let mut ui = vec![0];
        let mut rv = vec![self.kappa / self.sigma_star];
        for &i in &self.u_block {
            ui.push(i + 1);
            rv.push(lookup(&self.r, i));
        }
        let vi = self.v_block.iter().map(|&j| j + 1).collect();
        let cv = self.v_block.iter().map(|&j| lookup(&self.c, j)).collect();
        (ui, rv, vi, cv)
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Assemble a draw from the rank-two factors, solve for `kappa`, and run the checks.
///
/// `r` and `c` are indexed by sorted position and must have disjoint supports.
#[allow(clippy::too_many_arguments)]
fn assemble(
    _kind: PriorKind,
    xi: &LoadingVector,
    r: Vec<(usize, f64)>,
    c: Vec<(usize, f64)>,
    kappa_rule: KappaRule,
    tau: f64,
    sigma_star: f64,
    sparsity_cap: usize,
    m1: f64,
    m2: f64,
) -> Solved {
    let xs = xi.coords();
    let rr: f64 = r.iter().map(|(_, v)| v * v).sum();
    let cc: f64 = c.iter().map(|(_, v)| v * v).sum();
    let denom = 1.0 - rr * cc;
    let xr: f64 = r.iter().map(|&(j, v)| xs[j] * v).sum();
    let xc: f64 = c.iter().map(|&(j, v)| xs[j] * v).sum();
    // xi' beta = kappa * coef
    let coef = if denom > 0.0 { (xc - cc * xr) / denom } else { f64::NAN };
    let mut issue = None;
    let kappa = match kappa_rule {
        KappaRule::Solve => {
            // negated so a NaN coefficient lands here too
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(coef > 1e-14) {
                issue = Some(Error::InvalidInput("kappa coefficient not positive".into()));
                0.0
            } else {
                let k = tau / coef;
                if !(k > 0.0 && k <= 1.0) {
                    issue = Some(Error::KappaOutOfRange(k));
                }
                k
            }
        }
        KappaRule::SolveOrZero => {
            if coef > 1e-14 && tau / coef > 0.0 && tau / coef <= 1.0 {
                tau / coef
            } else {
                0.0
            }
        }
        KappaRule::Fixed(k) => k,
    };
    let degenerate = kappa == 0.0;
    let b = if denom > 0.0 { kappa / denom } else { f64::NAN };
    let a = -b * cc;
    let perm = xi.perm();
    let mut beta: Vec<(usize, f64)> = Vec::new();
    if kappa != 0.0 {
        for &(j, v) in &r {
            if a * v != 0.0 {
                beta.push((perm[j], a * v));
            }
        }
        for &(j, v) in &c {
            if b * v != 0.0 {
                beta.push((perm[j], b * v));
            }
        }
    }
    beta.sort_by_key(|e| e.0);
    let raw = xi.raw();
    let constraint: f64 = beta.iter().map(|&(i, v)| raw[i] * v).sum();
    let var = sigma_star * sigma_star - b * kappa * cc;
    let noise_sd = if var > 0.0 { var.sqrt() } else { 0.0 };
    // spectrum of I + r c' + c r' on the active coordinates; the rest are ones
    let (min_eig, max_eig) = active_spectrum(&r, &c, xi.len());
    let residual = (constraint - tau).abs();
    let checks = DrawChecks { residual, sparsity: beta.len(), sparsity_cap, min_eig, max_eig, noise_sd };
    let ok = !degenerate
        && issue.is_none()
        && residual <= 1e-10 * tau.abs().max(1.0)
        && beta.len() <= sparsity_cap
        && min_eig >= 1.0 / m1
        && max_eig <= m1
        && noise_sd > 0.0
        && noise_sd <= m2;
    let r_orig = r.iter().map(|&(j, v)| (perm[j], v)).collect();
    let c_orig = c.iter().map(|&(j, v)| (perm[j], v)).collect();
    Solved { kappa, beta, noise_sd, valid: ok, degenerate, issue, checks, r: r_orig, c: c_orig }
}

/// Output of [`assemble`]; factors are back in original coordinates.
struct Solved {
    kappa: f64,
    beta: Vec<(usize, f64)>,
    noise_sd: f64,
    valid: bool,
    degenerate: bool,
    issue: Option<Error>,
    checks: DrawChecks,
    r: Vec<(usize, f64)>,
    c: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum KappaRule {
    /// Solve the constraint; out-of-range values are reported.
    Solve,
    /// Solve, but fall back to zero outside `(0, 1]`.
    SolveOrZero,
    Fixed(f64),
}

/// Extreme eigenvalues of `I + r c' + c r'` by eigendecomposition of the active block.
fn active_spectrum(r: &[(usize, f64)], c: &[(usize, f64)], p: usize) -> (f64, f64) {
    let r: Vec<_> = r.iter().filter(|e| e.1 != 0.0).collect();
    let c: Vec<_> = c.iter().filter(|e| e.1 != 0.0).collect();
    if r.is_empty() || c.is_empty() {
        return (1.0, 1.0);
    }
    let k = r.len() + c.len();
    let mut m = DMatrix::identity(k, k);
    for (a, &&(_, rv)) in r.iter().enumerate() {
        for (b, &&(_, cv)) in c.iter().enumerate() {
            m[(a, r.len() + b)] = rv * cv;
            m[(r.len() + b, a)] = rv * cv;
        }
    }
    let ev = linalg::sym_eigenvalues(&m);
    let (mut lo, mut hi) = (ev[0], ev[k - 1]);
    if k < p {
        lo = lo.min(1.0);
        hi = hi.max(1.0);
    }
    (lo, hi)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: PriorKind,
    xi: &LoadingVector,
    delta1: Vec<f64>,
    delta2: Vec<f64>,
    r: Vec<(usize, f64)>,
    c: Vec<(usize, f64)>,
    rule: KappaRule,
    tau: f64,
    sigma_star: f64,
    cap: usize,
    m1: f64,
    m2: f64,
    split: usize,
) -> PriorDraw {
    let Solved { kappa, beta, noise_sd, valid, degenerate, issue, checks, r, c } =
        assemble(kind, xi, r, c, rule, tau, sigma_star, cap, m1, m2);
    PriorDraw {
        kind,
        delta1,
        delta2,
        kappa,
        tau,
        sigma_star,
        r,
        c,
        beta,
        noise_sd,
        p: xi.len(),
        u_block: xi.perm()[..split].to_vec(),
        v_block: xi.perm()[split..].to_vec(),
        valid,
        degenerate,
        issue,
        checks,
    }
}

/// Prior driven by the top-`k_u` norm: a fixed unit direction on the leading
/// coordinates coupled to a random sparse block further down.
#[derive(Debug, Clone)]
pub struct Nu2Prior {
    xi: LoadingVector,
    pub k_u: usize,
    pub n: usize,
    pub p1: usize,
    pub delta1: Vec<f64>,
    pub entry: f64,
    pub tau: f64,
    pub consts: PriorConstants,
}

impl Nu2Prior {
    pub fn new(xi: &LoadingVector, k_u: usize, n: usize, consts: PriorConstants) -> Result<Self> {
        if k_u < 4 {
            return Err(Error::InvalidInput("the top-norm prior needs k_u >= 4".into()));
        }
        let p = xi.len();
        let p1 = k_u / 4;
        if 2 * p1 > p {
            return Err(Error::InvalidInput("need p >= 2 floor(k_u / 4)".into()));
        }
        let head = &xi.coords()[..p1];
        let hn = linalg::norm2(head);
        if hn == 0.0 {
            return Err(Error::InvalidInput("leading loading block is zero".into()));
        }
        let delta1 = head.iter().map(|v| -v / hn).collect();
        let lp = (p as f64).ln();
        let nf = n as f64;
        let entry = consts.c1 * (lp / nf).sqrt();
        let tau = consts.c2() * profile::nu2(xi, k_u) * k_u as f64 * lp / nf;
        Ok(Self { xi: xi.clone(), k_u, n, p1, delta1, entry, tau, consts })
    }

    pub fn sample(&self, seed: u64) -> PriorDraw {
        let mut r = rng::stream(seed, 2);
        let p2 = self.xi.len() - self.p1;
        let support = rng::sample_subset(&mut r, p2, self.p1);
        self.assemble(&support)
    }

    /// Draw with the random support fixed to `support` (positions within the lower block).
    pub fn assemble(&self, support: &[usize]) -> PriorDraw {
        let xs = self.xi.coords();
        let p2 = self.xi.len() - self.p1;
        let mut delta2 = vec![0.0; p2];
        for &j in support {
            delta2[j] = self.entry * sign(xs[self.p1 + j]);
        }
        let r: Vec<(usize, f64)> = self.delta1.iter().enumerate().map(|(j, &v)| (j, v)).collect();
        let c: Vec<(usize, f64)> = support.iter().map(|&j| (self.p1 + j, delta2[j])).collect();
        finish(
            PriorKind::Nu2,
            &self.xi,
            self.delta1.clone(),
            delta2,
            r,
            c,
            KappaRule::Solve,
            self.tau,
            self.consts.sigma_star,
            self.k_u / 2,
            self.consts.m1,
            self.consts.m2,
            self.p1,
        )
    }
}

/// Identity-design prior: independent coordinates switched on with
/// probabilities shaped by the root of the profile equation.
#[derive(Debug, Clone)]
pub struct Nu1Prior {
    xi: LoadingVector,
    pub k_u: usize,
    pub n: usize,
    pub lambda: f64,
    pub j1: usize,
    pub q: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: f64,
    pub consts: PriorConstants,
}

impl Nu1Prior {
    pub fn new(xi: &LoadingVector, k_u: usize, n: usize, tau: f64, consts: PriorConstants) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        let (_, lambda) = profile::solve_zeta(xi, k_u)?;
        let j1 = profile::j1(xi, lambda);
        let l2 = lambda * lambda;
        let xs = xi.coords();
        let k = xi.k_xi();
        let w: Vec<f64> = xs[..k].iter().map(|v| (-l2 / (v * v)).exp()).collect();
        let norm = xs[..k].iter().zip(&w).map(|(v, e)| v * v * e).sum::<f64>().sqrt();
        let q = xs[..k].iter().zip(&w).map(|(v, e)| (consts.c4 * v.abs() * e / norm).min(1.0)).collect();
        let gamma = xs[..k]
            .iter()
            .enumerate()
            .map(|(j, v)| if j < j1 { sign(*v) } else { lambda / v })
            .collect();
        Ok(Self { xi: xi.clone(), k_u, n, lambda, j1, q, gamma, tau, consts })
    }

    /// `c6 nu1 / sqrt(n)` with `c6 = c4 c5 / 4`.
    pub fn default_tau(xi: &LoadingVector, k_u: usize, n: usize, consts: &PriorConstants) -> Result<f64> {
        Ok(consts.c6() * profile::nu1(xi, k_u)? / (n as f64).sqrt())
    }

    pub fn sample(&self, seed: u64) -> PriorDraw {
        let mut r = rng::stream(seed, 1);
        let heads: Vec<bool> = self.q.iter().map(|&q| Bernoulli::new(q).unwrap().sample(&mut r)).collect();
        self.assemble(&heads)
    }

    /// Draw with the Bernoulli outcomes fixed.
    pub fn assemble(&self, heads: &[bool]) -> PriorDraw {
        let xs = self.xi.coords();
        let s = self.consts.c5 / (self.n as f64).sqrt();
        let delta: Vec<f64> = heads.iter().zip(&self.gamma).map(|(&h, g)| if h { s * g } else { 0.0 }).collect();
        let xd: f64 = delta.iter().zip(xs).map(|(d, x)| d * x).sum();
        let dd: f64 = delta.iter().map(|d| d * d).sum();
        let nnz = delta.iter().filter(|d| **d != 0.0).count();
        let ss = self.consts.sigma_star;
        let in_set = xd >= self.tau
            && 2 * nnz <= self.k_u
            && dd <= xd * xd * ss * ss / (2.0 * self.tau * self.tau);
        let rule = if in_set { KappaRule::Fixed(self.tau / xd) } else { KappaRule::Fixed(0.0) };
        let c: Vec<(usize, f64)> = delta.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, &v)| (j, v)).collect();
        finish(
            PriorKind::Nu1,
            &self.xi,
            delta,
            Vec::new(),
            Vec::new(),
            c,
            rule,
            self.tau,
            ss,
            self.k_u / 2,
            self.consts.m1,
            self.consts.m2,
            0,
        )
    }

    /// `E[xi' delta]` in closed form.
    pub fn mean_projection(&self) -> f64 {
        let s = self.consts.c5 / (self.n as f64).sqrt();
        let xs = self.xi.coords();
        self.q.iter().zip(&self.gamma).zip(xs).map(|((q, g), x)| q * s * g * x).sum()
    }
}

/// Block layout of the low-degree prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompLayout {
    /// Size of the leading block (`k_eff`).
    pub lead: usize,
    /// Start of the Bernoulli sub-block inside the leading block (`k_u`).
    pub k_u: usize,
    /// Support size of the random block in the tail.
    pub tail_support: usize,
    pub c8: f64,
    pub tau: f64,
    /// Cap on the number of active leading coordinates for a valid draw.
    pub lead_cap: usize,
    /// Cap on the total number of nonzero coefficients.
    pub beta_cap: usize,
}

/// Prior behind the low-degree bound: a random tail block coupled to a
/// Bernoulli pattern on the middle of the leading block.
#[derive(Debug, Clone)]
pub struct CompPrior {
    xi: LoadingVector,
    pub n: usize,
    pub layout: CompLayout,
    pub q: Vec<f64>,
    pub lead_entry: f64,
    pub tail_entry: f64,
    pub consts: PriorConstants,
}

impl CompPrior {
    pub fn new(xi: &LoadingVector, k_u: usize, n: usize, d: usize, consts: PriorConstants) -> Result<Self> {
        let p = xi.len();
        let ke = profile::k_eff(k_u, n, p, d);
        if !(8 <= 2 * k_u && 2 * k_u < ke && ke <= p) {
            return Err(Error::RegimeViolation { k_u, k_eff: ke, p });
        }
        let lp = (p as f64).ln();
        let tau = consts.c9() * profile::top_norm(xi, ke as f64) * k_u as f64 * lp / n as f64;
        let layout = CompLayout {
            lead: ke,
            k_u,
            tail_support: k_u / 4,
            c8: consts.c8,
            tau,
            lead_cap: k_u / 4,
            beta_cap: k_u / 2,
        };
        Self::with_layout(xi, n, layout, consts)
    }

    /// Build from an explicit layout; only structural consistency is checked.
    pub fn with_layout(xi: &LoadingVector, n: usize, layout: CompLayout, consts: PriorConstants) -> Result<Self> {
        let p = xi.len();
        if !(layout.k_u < layout.lead && layout.lead < p && layout.tail_support <= p - layout.lead && layout.k_u >= 1)
        {
            return Err(Error::InvalidInput("inconsistent prior layout".into()));
        }
        let xs = xi.coords();
        let p5 = (layout.lead - layout.k_u) as f64;
        let mid = &xs[layout.k_u..layout.lead];
        let mid_norm = linalg::norm2(mid);
        let ku = layout.k_u as f64;
        let q = mid
            .iter()
            .map(|v| if mid_norm > 0.0 { v.abs() / (8.0 * mid_norm) * ku / p5.sqrt() } else { 0.0 })
            .collect();
        let lp = (p as f64).ln();
        Ok(Self {
            xi: xi.clone(),
            n,
            layout,
            q,
            lead_entry: p5.sqrt() / ku,
            tail_entry: layout.c8 * (lp / n as f64).sqrt(),
            consts,
        })
    }

    pub fn sample(&self, seed: u64) -> PriorDraw {
        let mut r = rng::stream(seed, 3);
        let p4 = self.xi.len() - self.layout.lead;
        let support = rng::sample_subset(&mut r, p4, self.layout.tail_support);
        let heads: Vec<bool> = self.q.iter().map(|&q| r.random::<f64>() < q).collect();
        self.assemble(&support, &heads)
    }

    /// Draw with the tail support and the Bernoulli outcomes fixed.
    pub fn assemble(&self, tail_support: &[usize], heads: &[bool]) -> PriorDraw {
        let xs = self.xi.coords();
        let lead = self.layout.lead;
        let p4 = self.xi.len() - lead;
        let mut delta1 = vec![0.0; p4];
        for &j in tail_support {
            delta1[j] = self.tail_entry * sign(xs[lead + j]);
        }
        let mut delta2 = vec![0.0; lead];
        for (t, &h) in heads.iter().enumerate() {
            let j = self.layout.k_u + t;
            if h {
                delta2[j] = -self.lead_entry * sign(xs[j]);
            }
        }
        let r: Vec<(usize, f64)> = delta2.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, &v)| (j, v)).collect();
        let c: Vec<(usize, f64)> = tail_support.iter().map(|&j| (lead + j, delta1[j])).collect();
        let active = r.len();
        let mut d = finish(
            PriorKind::Comp,
            &self.xi,
            delta1,
            delta2,
            r,
            c,
            KappaRule::SolveOrZero,
            self.layout.tau,
            self.consts.sigma_star,
            self.layout.beta_cap,
            self.consts.m1,
            self.consts.m2,
            lead,
        );
        if active > self.layout.lead_cap {
            d.valid = false;
        }
        d
    }
}

/// `det(I - S0^{-1}(S1 - S0) S0^{-1}(S2 - S0))^{-n/2}`.
pub fn chi2_pair_integral(
    s1: &JointCovariance,
    s2: &JointCovariance,
    s0: &JointCovariance,
    n: usize,
) -> Result<f64> {
    Ok(ln_chi2_pair_integral(s1, s2, s0, n)?.exp())
}

/// Log of [`chi2_pair_integral`].
pub fn ln_chi2_pair_integral(
    s1: &JointCovariance,
    s2: &JointCovariance,
    s0: &JointCovariance,
    n: usize,
) -> Result<f64> {
    let inv0 = linalg::spd_inverse(&s0.sigma_z)?;
    // finiteness: S1^{-1} + S2^{-1} - S0^{-1} must be positive definite
    let k = linalg::spd_inverse(&s1.sigma_z)? + linalg::spd_inverse(&s2.sigma_z)? - &inv0;
    if nalgebra::Cholesky::new(k).is_none() {
        return Err(Error::DivergentIntegral);
    }
    let a = &inv0 * (&s1.sigma_z - &s0.sigma_z) * &inv0 * (&s2.sigma_z - &s0.sigma_z);
    let m = DMatrix::identity(a.nrows(), a.ncols()) - a;
    let (logdet, sgn) = linalg::log_abs_det(&m);
    if sgn <= 0.0 || !logdet.is_finite() {
        return Err(Error::DivergentIntegral);
    }
    Ok(-(n as f64) / 2.0 * logdet)
}

/// `Sigma^z` of the alternative point `(0, I, sigma_star)`.
pub fn alternative_point(p: usize, sigma_star: f64) -> JointCovariance {
    let mut z = DMatrix::identity(p + 1, p + 1);
    z[(0, 0)] = sigma_star * sigma_star;
    JointCovariance::new(z)
}

/// Closed form of the pair integral for two top-norm prior draws sharing `delta1`.
pub fn nu2_pair_closed_form(a: &PriorDraw, b: &PriorDraw, n: usize) -> f64 {
    let d1: f64 = a.delta1.iter().map(|v| v * v).sum();
    let d22 = linalg::dot(&a.delta2, &b.delta2);
    let s = a.kappa * b.kappa / (a.sigma_star * a.sigma_star) + d1;
    (1.0 - s * d22).powf(-(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub reps: usize,
}

/// Monte Carlo estimate of the chi-square divergence of the prior mixture from `theta_star`.
///
/// `sampler(seed)` returns a joint covariance, or `None` for a rejected draw;
/// rejected draws are resampled from the next seed.
pub fn chi2_mixture_mc<F>(sampler: F, theta_star: &JointCovariance, n: usize, reps: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(u64) -> Option<JointCovariance> + Sync,
{
    if reps < 100 {
        return Err(Error::InvalidInput("chi-square Monte Carlo needs at least 100 pairs".into()));
    }
    use rayon::prelude::*;
    let draw = |pair: usize, side: u64| -> Result<JointCovariance> {
        for attempt in 0..10_000u64 {
            let s = rng::derive(rng::derive(seed, pair as u64), side * 1_000_003 + attempt);
            if let Some(j) = sampler(s) {
                return Ok(j);
            }
        }
        Err(Error::InvalidInput("prior rejected 10000 consecutive draws".into()))
    };
    let vals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let a = draw(k, 0)?;
            let b = draw(k, 1)?;
            chi2_pair_integral(&a, &b, theta_star, n)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&vals, -1.0))
}

/// Mean (plus `shift`) and standard error of the mean.
pub fn mean_se(vals: &[f64], shift: f64) -> McEstimate {
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    McEstimate { estimate: mean + shift, se: (var / k).sqrt(), reps: vals.len() }
}

/// `E exp(c ln p J)` for `J ~ Hypergeometric(p, k, k)`.
pub fn hypergeometric_mgf(p: u64, k: u64, c: f64) -> Result<f64> {
    if k == 0 || 2 * k > p {
        return Err(Error::InvalidInput("need 1 <= k <= p / 2".into()));
    }
    let lg = |x: u64| statrs::function::gamma::ln_gamma(x as f64 + 1.0);
    let ln_choose = |a: u64, b: u64| lg(a) - lg(b) - lg(a - b);
    let lp = (p as f64).ln();
    let log_terms: Vec<f64> = (0..=k)
        .map(|j| c * lp * j as f64 + ln_choose(k, j) + ln_choose(p - k, k - j) - ln_choose(p, k))
        .collect();
    // normalise by the pmf total so rounding in the log-gamma values cancels
    let log_pmf: Vec<f64> = (0..=k)
        .map(|j| ln_choose(k, j) + ln_choose(p - k, k - j) - ln_choose(p, k))
        .collect();
    Ok(sum_exp(&log_terms) / sum_exp(&log_pmf))
}

/// `sum exp(v)` with a max shift and compensated summation.
fn sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut terms: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    terms.sort_by(|a, b| a.total_cmp(b));
    let (mut s, mut comp) = (0.0_f64, 0.0_f64);
    for t in terms {
        let y = t - comp;
        let u = s + y;
        comp = (u - s) - y;
        s = u;
    }
    s * mx.exp()
}

/// Translate the response so the prior is anchored at `t0`: `(Y, X) -> (Y - X beta0, X)`
/// with `beta0 = (t0 / xi_j0) e_j0` and `j0` the first support coordinate of `xi`.
pub fn anchor_shift(xi: &LoadingVector, t0: f64) -> DVector<f64> {
    let raw = xi.raw();
    let j0 = raw.iter().position(|v| *v != 0.0).expect("loading is nonzero");
    let mut b = DVector::zeros(raw.len());
    b[j0] = t0 / raw[j0];
    b
}
