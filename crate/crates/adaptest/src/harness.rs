//! Seeded Monte Carlo experiments, key-value configs and result tables.
//!
//! Replicates run on a rayon pool of a caller-chosen size. Every replicate
//! derives its own seed from the master seed and its index, and results are
//! collected in index order, so output bytes do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::SpikedOptions;
use crate::inference::{self, component_alpha, InferenceOptions, MixedContext};
use crate::low_degree;
use crate::model::{self, Dataset, LoadingVector, ModelParams, TestProblem};
use crate::priors::{self, CompPrior, Nu1Prior, Nu2Prior, PriorConstants, PriorDraw};
use crate::profile::{self, ProfileKind};
use crate::rng;
use crate::scca::{self, Hypothesis, SccaParams, Statistic};

/// Flat `key = value` configuration. `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Config(format!("line {}: bad key {k:?}", no + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text: keys sorted, one `key = value` per line.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.serialize().as_bytes());
        h.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.map.get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    /// Comma separated list; `default` when the key is absent.
    pub fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
                .collect(),
        }
    }
}

/// One output row. Replicate rows have no standard error; aggregate rows always do.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub replicate: Option<usize>,
    pub cell: String,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
}

impl ResultRow {
    pub fn rep(replicate: usize, cell: &str, metric: &str, value: f64) -> Self {
        Self { replicate: Some(replicate), cell: cell.into(), metric: metric.into(), value, se: None }
    }

    pub fn agg(cell: &str, metric: &str, value: f64, se: f64) -> Self {
        Self { replicate: None, cell: cell.into(), metric: metric.into(), value, se: Some(se) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub digest: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("digest,replicate,cell,metric,value,se\n");
        for r in &self.rows {
            let rep = r.replicate.map(|v| v.to_string()).unwrap_or_default();
            let se = r.se.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{},{}", self.digest, rep, r.cell, r.metric, r.value, se);
        }
        s
    }

    /// First aggregate row with this cell and metric.
    pub fn find(&self, cell: &str, metric: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.replicate.is_none() && r.cell == cell && r.metric == metric)
    }
}

/// Per-replicate rows plus aggregates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub replicates: ResultTable,
    pub summary: ResultTable,
    /// Extra JSON payload for the sidecar.
    pub extra: serde_json::Value,
    /// Additional named files (for example generated datasets).
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    fn new(experiment: &str, cfg: &Config) -> Self {
        let d = cfg.digest();
        Self {
            experiment: experiment.into(),
            replicates: ResultTable { digest: d.clone(), rows: Vec::new() },
            summary: ResultTable { digest: d, rows: Vec::new() },
            extra: serde_json::Value::Null,
            files: Vec::new(),
        }
    }

    /// Write `results.csv`, `summary.csv` and the `results.json` sidecar; optionally `plotdata.csv`.
    pub fn write(&self, dir: &Path, cfg: &Config, emit_plotdata: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut put = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            out.push(p);
            Ok(())
        };
        put("results.csv", self.replicates.to_csv())?;
        put("summary.csv", self.summary.to_csv())?;
        let side = serde_json::json!({
            "experiment": self.experiment,
            "digest": cfg.digest(),
            "config": cfg.entries(),
            "replicate_rows": self.replicates.rows.len(),
            "summary_rows": self.summary.rows.len(),
            "extra": self.extra,
        });
        put("results.json", serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))? + "\n")?;
        if emit_plotdata {
            // one (x, y, se) file per metric; x is the numeric tail of the cell label when it has one
            let mut metrics: Vec<&str> = self.summary.rows.iter().map(|r| r.metric.as_str()).collect();
            metrics.dedup();
            let mut seen = std::collections::BTreeSet::new();
            for m in metrics {
                if !seen.insert(m) {
                    continue;
                }
                let mut body = String::from("x,y,se\n");
                for r in self.summary.rows.iter().filter(|r| r.metric == m) {
                    let x = r.cell.rsplit('=').next().unwrap_or("");
                    let x = if x.parse::<f64>().is_ok() { x.to_string() } else { r.cell.clone() };
                    let _ = writeln!(body, "{},{},{}", x, r.value, r.se.unwrap_or(0.0));
                }
                put(&format!("plot_{m}.csv"), body)?;
            }
        }
        for (name, body) in &self.files {
            put(name, body.clone())?;
        }
        Ok(out)
    }
}

/// Map `f` over `0..count` on a pool with `threads` workers (0 = rayon default), in index order.
pub fn run_parallel<T, F>(threads: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let e = priors::mean_se(v, 0.0);
    (e.estimate, e.se)
}

/// Binomial proportion and its standard error.
pub fn proportion(hits: usize, total: usize) -> (f64, f64) {
    let r = hits as f64 / total as f64;
    (r, (r * (1.0 - r) / total as f64).sqrt())
}

/// Lower empirical quantile (type 1).
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let idx = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    s[idx]
}

/// Loading vector described by the `loading*` keys.
pub fn loading_from_config(cfg: &Config, p: usize, k_u: usize, seed: u64) -> Result<LoadingVector> {
    let kind = cfg.raw("loading").unwrap_or("regular");
    let kind = match kind {
        "regular" => ProfileKind::Regular { k: cfg.get("loading_k", p)?, a: cfg.get("loading_a", 1.0)?, p },
        "multiscale" => ProfileKind::Multiscale {
            k_u: cfg.get("loading_k_u", k_u)?,
            levels: cfg.get("loading_levels", 2)?,
            a: cfg.get("loading_a", 1.0)?,
            p,
            c0: cfg.get("loading_c0", 8.0)?,
        },
        "subweibull" => ProfileKind::SubWeibull { q: cfg.get("loading_q", 2.0)?, p },
        "file" => {
            let path: String = cfg.require("loading_file")?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
            let v = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("{path}: bad number {t:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != p {
                return Err(Error::Config(format!("{path} has {} entries, p = {p}", v.len())));
            }
            return LoadingVector::new(&v);
        }
        "values" => {
            let v: Vec<f64> = cfg.list("loading_values", Vec::new())?;
            if v.len() != p {
                return Err(Error::Config(format!("loading_values has {} entries, p = {p}", v.len())));
            }
            return LoadingVector::new(&v);
        }
        other => return Err(Error::Config(format!("unknown loading {other:?}"))),
    };
    profile::example_profile(&kind, rng::derive(seed, 0x10ad))
}

/// Design covariance from `design` (`identity`, `ar`, `spiked`).
pub fn design_from_config(cfg: &Config, p: usize) -> Result<DMatrix<f64>> {
    match cfg.raw("design").unwrap_or("identity") {
        "identity" => Ok(DMatrix::identity(p, p)),
        "ar" => {
            let rho: f64 = cfg.get("design_rho", 0.5)?;
            if rho.abs() >= 1.0 {
                return Err(Error::Config("design_rho must lie in (-1, 1)".into()));
            }
            Ok(DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())))
        }
        "spiked" => {
            let k: usize = cfg.get("design_spike_k", 2)?;
            let h: f64 = cfg.get("design_spike", 0.5)?;
            if k == 0 || k > p {
                return Err(Error::Config("design_spike_k must lie in 1..=p".into()));
            }
            let mut s = DMatrix::identity(p, p);
            let v = 1.0 / (k as f64).sqrt();
            for i in 0..k {
                for j in 0..k {
                    s[(i, j)] += h * v * v;
                }
            }
            Ok(s)
        }
        other => Err(Error::Config(format!("unknown design {other:?}"))),
    }
}

/// Everything a regression replicate needs.
#[derive(Debug, Clone)]
pub struct RegressionSetup {
    pub theta: ModelParams,
    pub xi: LoadingVector,
    pub truth: f64,
    pub n: usize,
    pub k_u: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
    pub method: Method,
    pub opts: InferenceOptions,
    pub spiked: SpikedOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mixed,
    Plugin,
    Debiased,
    KnownSigma,
    Spiked,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mixed" => Method::Mixed,
            "plugin" => Method::Plugin,
            "debiased" => Method::Debiased,
            "known_sigma" => Method::KnownSigma,
            "spiked" => Method::Spiked,
            _ => return Err(Error::Config(format!("unknown method {s:?}"))),
        })
    }
}

impl RegressionSetup {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let n: usize = cfg.require("n")?;
        let p: usize = cfg.require("p")?;
        let k_u: usize = cfg.require("k_u")?;
        let seed: u64 = cfg.get("seed", 1)?;
        let xi = loading_from_config(cfg, p, k_u, seed)?;
        let sigma = design_from_config(cfg, p)?;
        let bk: usize = cfg.get("beta_k", k_u.min(p))?;
        let bv: f64 = cfg.get("beta_value", 1.0)?;
        if bk > p {
            return Err(Error::Config("beta_k exceeds p".into()));
        }
        let mut beta = DVector::zeros(p);
        // signed coefficients on coordinates 0, stride, 2 stride, ...
        let stride: usize = cfg.get("beta_stride", 1)?;
        for i in 0..bk {
            let j = (i * stride.max(1)) % p;
            beta[j] = if i % 2 == 0 { bv } else { -bv };
        }
        let noise: f64 = cfg.get("noise_sd", 1.0)?;
        let theta = ModelParams::new(beta, sigma, noise);
        let truth = linalg_dot(&xi.raw(), theta.beta.as_slice());
        let mut opts = InferenceOptions { scan_all_m: cfg.get("scan_all_m", false)?, ..Default::default() };
        opts.c_xi = cfg.get("c_xi", opts.c_xi)?;
        opts.c_beta = cfg.get("c_beta", opts.c_beta)?;
        opts.c_pi = cfg.get("c_pi", opts.c_pi)?;
        opts.c2 = cfg.get("c2", opts.c2)?;
        opts.c3 = cfg.get("c3", opts.c3)?;
        opts.c_spike = cfg.get("c_spike", opts.c_spike)?;
        opts.c_spike_bias = cfg.get("c_spike_bias", opts.c_spike_bias)?;
        opts.lasso.sigma_floor = cfg.get("sigma_floor", 0.0)?;
        let spiked = SpikedOptions {
            gamma_star: cfg.get("gamma_star", 3.0)?,
            m1: cfg.get("m1", 10.0)?,
            combination_cap: cfg.get("combination_cap", 10_000_000)?,
        };
        let alpha = cfg.get("alpha", 0.05)?;
        let eta = cfg.get("eta", 0.05)?;
        TestProblem::new(xi.clone(), truth, k_u, alpha, eta)?;
        Ok(Self {
            theta,
            xi,
            truth,
            n,
            k_u,
            alpha,
            eta,
            seed,
            method: cfg.get("method", Method::Mixed)?,
            opts,
            spiked,
        })
    }

    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        model::generate_dataset(&self.theta, self.n, rng::derive(self.seed, rep as u64))
    }

    /// Interval for replicate `rep` and the cutoff used.
    pub fn interval(&self, data: &Dataset, rep: usize) -> Result<(inference::ConfidenceInterval, usize, bool)> {
        let a = component_alpha(self.alpha, self.eta);
        let p = data.p();
        let split_seed = rng::derive(rng::derive(self.seed, rep as u64), 0x5b17);
        match self.method {
            Method::Mixed | Method::Plugin | Method::Debiased => {
                let ctx = MixedContext::new(data, &self.opts)?;
                let m = match self.method {
                    Method::Plugin => 0,
                    Method::Debiased => p,
                    _ => ctx.choose_m(&self.xi, self.k_u, a, &self.opts),
                };
                let (ci, proj) = ctx.mixed_ci(&self.xi, m, self.k_u, a, &self.opts);
                Ok((ci, m, proj.feasible))
            }
            Method::KnownSigma => {
                let ci = inference::known_sigma_ci(
                    data,
                    &self.theta.sigma_cov,
                    &self.xi.raw(),
                    self.k_u,
                    self.alpha,
                    split_seed,
                    &self.opts,
                )?;
                Ok((ci, p, true))
            }
            Method::Spiked => {
                let (ci, _) =
                    inference::spiked_ci(data, &self.xi, self.k_u, self.alpha, split_seed, &self.opts, &self.spiked)?;
                Ok((ci, p, true))
            }
        }
    }
}

fn linalg_dot(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dot(a, b)
}

#[derive(Debug, Clone, Copy)]
struct RepOut {
    center: f64,
    radius: f64,
    m: usize,
    feasible: bool,
}

/// Size and power of one interval construction.
///
/// `shift` lists absolute deviations `xi' beta - t0`; `shift_radius_multiple`
/// lists deviations in units of the median realised radius of the same run.
pub fn run_size_power(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    let setup = RegressionSetup::from_config(cfg)?;
    let reps: usize = cfg.get("reps", 200)?;
    let shifts: Vec<f64> = cfg.list("shift", vec![0.0])?;
    let mults: Vec<f64> = cfg.list("shift_radius_multiple", Vec::new())?;
    let outs = run_parallel(threads, reps, |k| {
        let data = setup.dataset(k)?;
        let (ci, m, feasible) = setup.interval(&data, k)?;
        Ok(RepOut { center: ci.center, radius: ci.radius, m, feasible })
    })?;
    let mut out = ExperimentOutput::new("size_power", cfg);
    if reps == 0 {
        return Ok(out);
    }
    for (k, o) in outs.iter().enumerate() {
        out.replicates.rows.push(ResultRow::rep(k, "", "center", o.center));
        out.replicates.rows.push(ResultRow::rep(k, "", "radius", o.radius));
        out.replicates.rows.push(ResultRow::rep(k, "", "m_used", o.m as f64));
    }
    let radii: Vec<f64> = outs.iter().map(|o| o.radius).collect();
    let med = quantile(&radii, 0.5);
    let (mr, mr_se) = mean_se(&radii);
    let s = &mut out.summary.rows;
    s.push(ResultRow::agg("", "mean_radius", mr, mr_se));
    // standard error of the median via the binomial order-statistic band, scaled to one sd
    let (lo, hi) = (quantile(&radii, 0.5 - 0.5 / (reps as f64).sqrt()), quantile(&radii, 0.5 + 0.5 / (reps as f64).sqrt()));
    s.push(ResultRow::agg("", "median_radius", med, (hi - lo) / 2.0));
    let feas = outs.iter().filter(|o| o.feasible).count();
    let (fr, fse) = proportion(feas, reps);
    s.push(ResultRow::agg("", "feasible_rate", fr, fse));
    let mut push_shift = |label: String, shift: f64| {
        let t0 = setup.truth - shift;
        let hits = outs.iter().filter(|o| (t0 - o.center).abs() > o.radius).count();
        let (r, se) = proportion(hits, reps);
        s.push(ResultRow::agg(&label, "rejection_rate", r, se));
    };
    for &sh in &shifts {
        push_shift(format!("shift={sh}"), sh);
    }
    for &mu in &mults {
        push_shift(format!("radius_multiple={mu}"), mu * med);
    }
    out.extra = serde_json::json!({ "truth": setup.truth, "median_radius": med });
    Ok(out)
}

/// Mean realised radius of the mixed interval as a function of the cutoff.
pub fn run_length_sweep(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    let setup = RegressionSetup::from_config(cfg)?;
    let reps: usize = cfg.get("reps", 50)?;
    let p = setup.theta.p();
    let mut grid: Vec<usize> = cfg.list("m_grid", MixedContext::m_grid(p))?;
    grid.sort_unstable();
    grid.dedup();
    if grid.iter().any(|&m| m > p) {
        return Err(Error::Config("m_grid entries must not exceed p".into()));
    }
    let a = component_alpha(setup.alpha, setup.eta);
    let per = run_parallel(threads, reps, |k| {
        let data = setup.dataset(k)?;
        let ctx = MixedContext::new(&data, &setup.opts)?;
        Ok(grid.iter().map(|&m| ctx.mixed_ci(&setup.xi, m, setup.k_u, a, &setup.opts).0.radius).collect::<Vec<f64>>())
    })?;
    let mut out = ExperimentOutput::new("length_sweep", cfg);
    if reps == 0 {
        return Ok(out);
    }
    for (k, radii) in per.iter().enumerate() {
        for (m, r) in grid.iter().zip(radii) {
            out.replicates.rows.push(ResultRow::rep(k, &format!("m={m}"), "radius", *r));
        }
    }
    let mut best = (f64::INFINITY, 0);
    for (i, &m) in grid.iter().enumerate() {
        let col: Vec<f64> = per.iter().map(|v| v[i]).collect();
        let (mean, se) = mean_se(&col);
        if mean < best.0 {
            best = (mean, m);
        }
        let cell = format!("m={m}");
        out.summary.rows.push(ResultRow::agg(&cell, "mean_radius", mean, se));
        let obj = profile::upper_objective(&setup.xi, setup.k_u, setup.n, m);
        out.summary.rows.push(ResultRow::agg(&cell, "rate_objective", obj, 0.0));
    }
    let (_, m_star) = profile::cutoff(setup.k_u, setup.n, p);
    out.extra = serde_json::json!({ "argmin_m": best.1, "m_star": m_star, "grid": grid });
    Ok(out)
}

/// One cell of the regular-loading phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseCell {
    pub gamma_xi: f64,
    pub gamma_tau: f64,
    pub n: usize,
    pub k_u: usize,
    pub k_xi: usize,
    pub tau: f64,
    pub label: profile::PhaseLabel,
}

/// Cell geometry for `p`, `n = p^gn`, `k_u = p^gu`, `k_xi = p^gx`, `tau = p^gt / sqrt(n)`.
pub fn phase_cell(p: usize, gu: f64, gn: f64, gx: f64, gt: f64) -> PhaseCell {
    let pf = p as f64;
    let n = pf.powf(gn).round().max(2.0) as usize;
    let k_u = pf.powf(gu).round().max(1.0) as usize;
    let k_xi = (pf.powf(gx).round() as usize).clamp(1, p);
    let tau = pf.powf(gt) / (n as f64).sqrt();
    PhaseCell { gamma_xi: gx, gamma_tau: gt, n, k_u, k_xi, tau, label: profile::classify_cell(gx, gt, gu, gn) }
}

/// Power of the mixed test over a `(gamma_xi, gamma_tau)` grid. One replicate row per cell and replicate.
pub fn run_phase_diagram(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    let p: usize = cfg.require("p")?;
    let gu: f64 = cfg.require("gamma_u")?;
    let gn: f64 = cfg.require("gamma_n")?;
    let gxs: Vec<f64> = cfg.list("gamma_xi", vec![0.2, 0.5, 0.8])?;
    let gts: Vec<f64> = cfg.list("gamma_tau", vec![0.0, 0.25, 0.5])?;
    let reps: usize = cfg.get("reps", 20)?;
    let seed: u64 = cfg.get("seed", 1)?;
    let alpha: f64 = cfg.get("alpha", 0.05)?;
    let eta: f64 = cfg.get("eta", 0.05)?;
    let opts = InferenceOptions { scan_all_m: cfg.get("scan_all_m", false)?, ..Default::default() };
    let cells: Vec<PhaseCell> =
        gxs.iter().flat_map(|&gx| gts.iter().map(move |&gt| (gx, gt))).map(|(gx, gt)| phase_cell(p, gu, gn, gx, gt)).collect();
    let jobs = cells.len() * reps;
    let decisions = run_parallel(threads, jobs, |j| {
        let (ci, k) = (j / reps, j % reps);
        let c = &cells[ci];
        let mut load = vec![0.0; p];
        load[..c.k_xi].iter_mut().for_each(|v| *v = 1.0);
        let xi = LoadingVector::new(&load)?;
        let mut beta = DVector::zeros(p);
        beta[0] = c.tau;
        let theta = ModelParams::new(beta, DMatrix::identity(p, p), 1.0);
        let data = model::generate_dataset(&theta, c.n, rng::derive(rng::derive(seed, ci as u64), k as u64))?;
        let problem = TestProblem::new(xi, 0.0, c.k_u, alpha, eta)?;
        Ok(inference::mixed_test(&data, &problem, &opts)?.reject)
    })?;
    let mut out = ExperimentOutput::new("phase_diagram", cfg);
    for (ci, c) in cells.iter().enumerate() {
        let cell = format!("gx={};gt={}", c.gamma_xi, c.gamma_tau);
        let mut hits = 0;
        for k in 0..reps {
            let d = decisions[ci * reps + k];
            hits += d as usize;
            out.replicates.rows.push(ResultRow::rep(k, &cell, "reject", d as u8 as f64));
        }
        if reps > 0 {
            let (r, se) = proportion(hits, reps);
            out.summary.rows.push(ResultRow::agg(&format!("{cell};label={}", c.label.as_str()), "power", r, se));
        }
    }
    out.extra = serde_json::to_value(&cells).map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}

/// Constant that makes a split-sample interval cover at `level`: the
/// `level` quantile of `|center - truth| / radius` at unit constants.
pub fn calibrate_radius_constant(cfg: &Config, level: f64, threads: usize) -> Result<f64> {
    let mut setup = RegressionSetup::from_config(cfg)?;
    setup.opts.c2 = 0.5;
    setup.opts.c3 = 0.5;
    setup.opts.c_spike = 1.0;
    setup.opts.c_spike_bias = 1.0;
    let reps: usize = cfg.get("calibration_reps", 200)?;
    let calib_seed = rng::derive(setup.seed, 0xca11);
    let setup = RegressionSetup { seed: calib_seed, ..setup };
    let ratios = run_parallel(threads, reps, |k| {
        let data = setup.dataset(k)?;
        let (ci, _, _) = setup.interval(&data, k)?;
        Ok((ci.center - setup.truth).abs() / ci.radius)
    })?;
    Ok(quantile(&ratios, level))
}

/// Prior sampler named by `prior` (`nu1`, `nu2`, `comp`).
pub enum AnyPrior {
    Nu1(Nu1Prior),
    Nu2(Nu2Prior),
    Comp(CompPrior),
}

impl AnyPrior {
    pub fn sample(&self, seed: u64) -> PriorDraw {
        match self {
            AnyPrior::Nu1(p) => p.sample(seed),
            AnyPrior::Nu2(p) => p.sample(seed),
            AnyPrior::Comp(p) => p.sample(seed),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let n: usize = cfg.require("n")?;
        let p: usize = cfg.require("p")?;
        let k_u: usize = cfg.require("k_u")?;
        let seed: u64 = cfg.get("seed", 1)?;
        let xi = loading_from_config(cfg, p, k_u, seed)?;
        let mut c = PriorConstants { sigma_star: cfg.get("sigma_star", 5.0)?, ..Default::default() };
        c.c1 = cfg.get("c1", c.c1)?;
        c.c4 = cfg.get("c4", c.c4)?;
        c.c5 = cfg.get("c5", c.c5)?;
        c.c8 = cfg.get("c8", c.c8)?;
        c.m1 = cfg.get("m1", c.m1)?;
        c.m2 = cfg.get("m2", c.m2)?;
        if let Some(v) = cfg.raw("c2") {
            c.c2 = Some(v.parse().map_err(|_| Error::Config("c2".into()))?);
        }
        if let Some(v) = cfg.raw("c9") {
            c.c9 = Some(v.parse().map_err(|_| Error::Config("c9".into()))?);
        }
        Ok(match cfg.raw("prior").unwrap_or("comp") {
            "nu1" => {
                let tau = match cfg.raw("tau") {
                    Some(t) => t.parse().map_err(|_| Error::Config("tau".into()))?,
                    None => Nu1Prior::default_tau(&xi, k_u, n, &c)?,
                };
                AnyPrior::Nu1(Nu1Prior::new(&xi, k_u, n, tau, c)?)
            }
            "nu2" => AnyPrior::Nu2(Nu2Prior::new(&xi, k_u, n, c)?),
            "comp" => AnyPrior::Comp(CompPrior::new(&xi, k_u, n, cfg.get("degree", 1)?, c)?),
            other => return Err(Error::Config(format!("unknown prior {other:?}"))),
        })
    }
}

/// Validity diagnostics of a prior and, with `chi2_reps > 0`, a chi-square estimate.
pub fn run_prior(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    let prior = AnyPrior::from_config(cfg)?;
    let draws: usize = cfg.get("draws", 1000)?;
    let seed: u64 = cfg.get("seed", 1)?;
    let n: usize = cfg.require("n")?;
    let got = run_parallel(threads, draws, |k| Ok(prior.sample(rng::derive(seed, k as u64))))?;
    let mut out = ExperimentOutput::new("prior", cfg);
    for (k, d) in got.iter().enumerate() {
        out.replicates.rows.push(ResultRow::rep(k, "", "valid", d.valid as u8 as f64));
        out.replicates.rows.push(ResultRow::rep(k, "", "kappa", d.kappa));
        out.replicates.rows.push(ResultRow::rep(k, "", "residual", d.checks.residual));
    }
    let valid = got.iter().filter(|d| d.valid).count();
    let (r, se) = proportion(valid, draws);
    out.summary.rows.push(ResultRow::agg("", "validity_rate", r, se));
    let chi_reps: usize = cfg.get("chi2_reps", 0)?;
    if chi_reps > 0 {
        let p = got[0].p;
        let base = priors::alternative_point(p, got[0].sigma_star);
        let est = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(|| {
                priors::chi2_mixture_mc(
                    |s| {
                        let d = prior.sample(s);
                        d.valid.then(|| d.joint())
                    },
                    &base,
                    n,
                    chi_reps,
                    rng::derive(seed, 0xc412),
                )
            })?;
        out.summary.rows.push(ResultRow::agg("", "chi2", est.estimate, est.se));
    }
    Ok(out)
}

/// Low-degree norms of the empirical prior mixture for `D = 0..=max_degree`.
pub fn run_lowdeg(cfg: &Config, _threads: usize) -> Result<ExperimentOutput> {
    let prior = AnyPrior::from_config(cfg)?;
    let n: usize = cfg.require("n")?;
    let p: usize = cfg.require("p")?;
    let draws: usize = cfg.get("draws", 200)?;
    let max_d: usize = cfg.get("max_degree", 4)?;
    let seed: u64 = cfg.get("seed", 1)?;
    let sample: Vec<PriorDraw> = (0..draws).map(|k| prior.sample(rng::derive(seed, k as u64))).collect();
    let mut out = ExperimentOutput::new("lowdeg", cfg);
    for d in 0..=max_d {
        let v = low_degree::ld_norm(&sample, d, n)?;
        out.summary.rows.push(ResultRow::agg(&format!("D={d}"), "ld_norm", v, 0.0));
        out.summary.rows.push(ResultRow::agg(
            &format!("D={d}"),
            "ln_uniform_bound",
            low_degree::ld_uniform_bound(n, p, d.max(1)),
            0.0,
        ));
    }
    if let Ok(c) = low_degree::empirical_chi2(&sample, n) {
        out.summary.rows.push(ResultRow::agg("", "empirical_chi2_plus_one", 1.0 + c, 0.0));
    }
    Ok(out)
}

fn parse_stats(cfg: &Config) -> Result<Vec<Statistic>> {
    cfg.list::<String>("statistics", vec!["scan".into(), "max_col".into(), "max_row".into()])?
        .iter()
        .map(|s| {
            Statistic::ALL
                .iter()
                .copied()
                .find(|st| st.as_str() == s)
                .ok_or_else(|| Error::Config(format!("unknown statistic {s:?}")))
        })
        .collect()
}

/// Sparse CCA experiments selected by `mode`:
///
/// * `stats` (default): null-calibrated power at `lambda`.
/// * `sweep`: the same over the `lambdas` list.
/// * `generate`: one instance written as `instance.csv`, with its statistics.
/// * `reduce`: one instance mapped to a regression dataset (`reduced.csv`) and
///   decided through the mixed test.
pub fn run_scca(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    let base = SccaParams {
        n: cfg.require("n")?,
        s: cfg.require("s")?,
        p1: cfg.require("p1")?,
        p2: cfg.require("p2")?,
        lambda: cfg.get("lambda", 0.0)?,
    };
    let alpha: f64 = cfg.get("alpha", 0.05)?;
    let seed: u64 = cfg.get("seed", 1)?;
    let stats = parse_stats(cfg)?;
    let hyp = match cfg.raw("hypothesis").unwrap_or("alternative") {
        "null" => Hypothesis::Null,
        "alternative" => Hypothesis::Alternative,
        other => return Err(Error::Config(format!("unknown hypothesis {other:?}"))),
    };
    let mut out = ExperimentOutput::new("scca", cfg);
    match cfg.raw("mode").unwrap_or("stats") {
        "generate" => {
            let inst = scca::gen_scca(base, hyp, seed)?;
            let r = inst.cross_cov();
            for st in &stats {
                out.summary.rows.push(ResultRow::agg(st.as_str(), "statistic", scca::statistic(*st, &r, base.s)?, 0.0));
            }
            let mut body = String::new();
            let head: Vec<String> = (1..=base.p1)
                .map(|j| format!("u1_{j}"))
                .chain((1..=base.p2).map(|j| format!("u2_{j}")))
                .collect();
            let _ = writeln!(body, "{}", head.join(","));
            for i in 0..inst.rows() {
                let row: Vec<String> =
                    inst.u1.row(i).iter().chain(inst.u2.row(i).iter()).map(|v| v.to_string()).collect();
                let _ = writeln!(body, "{}", row.join(","));
            }
            out.files.push(("instance.csv".into(), body));
        }
        "reduce" => {
            let inst = scca::gen_scca(base, hyp, seed)?;
            let red = scca::reduce_to_lt(
                &inst,
                cfg.get("sigma_star", 1.0)?,
                cfg.get("c10", 0.5)?,
                cfg.get("t0", 0.0)?,
                alpha,
                cfg.get("eta", 0.05)?,
                rng::derive(seed, 0x4ed),
            )?;
            let opts = InferenceOptions { scan_all_m: cfg.get("scan_all_m", false)?, ..Default::default() };
            let dec = inference::mixed_test(&red.data, &red.problem, &opts)?;
            out.summary.rows.push(ResultRow::agg("", "tau_red", red.tau, 0.0));
            out.summary.rows.push(ResultRow::agg("", "lt_reject", dec.reject as u8 as f64, 0.0));
            // the detection rule declares a signal when the functional test does not reject
            out.summary.rows.push(ResultRow::agg("", "scca_decision", (!dec.reject) as u8 as f64, 0.0));
            out.files.push(("reduced.csv".into(), red.data.to_csv()));
        }
        mode @ ("stats" | "sweep") => {
            let lambdas: Vec<f64> =
                if mode == "sweep" { cfg.list("lambdas", vec![base.lambda])? } else { vec![base.lambda] };
            let reps: usize = cfg.get("reps", 200)?;
            let null_reps: usize = cfg.get("null_reps", 2000)?;
            let stat_vals = |params: SccaParams, hyp: Hypothesis, count: usize, sd: u64| -> Result<Vec<Vec<f64>>> {
                run_parallel(threads, count, |k| {
                    let inst = scca::gen_scca(params, hyp, rng::derive(sd, k as u64))?;
                    let r = inst.cross_cov();
                    stats.iter().map(|&st| scca::statistic(st, &r, params.s)).collect()
                })
            };
            let null = stat_vals(SccaParams { lambda: 0.0, ..base }, Hypothesis::Null, null_reps, rng::derive(seed, 0))?;
            let thr: Vec<f64> = (0..stats.len())
                .map(|i| quantile(&null.iter().map(|v| v[i]).collect::<Vec<_>>(), 1.0 - alpha))
                .collect();
            for (i, st) in stats.iter().enumerate() {
                let unit = scca::threshold(*st, base.n, base.s, base.p1, base.p2, 1.0);
                let fp = null.iter().filter(|v| v[i] > thr[i]).count();
                let (f, fse) = proportion(fp, null_reps.max(1));
                out.summary.rows.push(ResultRow::agg(st.as_str(), "calibrated_threshold", thr[i], 0.0));
                out.summary.rows.push(ResultRow::agg(st.as_str(), "calibrated_constant", thr[i] / unit, 0.0));
                out.summary.rows.push(ResultRow::agg(st.as_str(), "null_rejection", f, fse));
                let b = scca::boundary(*st, base.n, base.s, base.p1, base.p2);
                out.summary.rows.push(ResultRow::agg(st.as_str(), "boundary", b, 0.0));
            }
            for (li, &lam) in lambdas.iter().enumerate() {
                let params = SccaParams { lambda: lam, ..base };
                let alt = stat_vals(params, Hypothesis::Alternative, reps, rng::derive(seed, 1 + li as u64))?;
                for (k, v) in alt.iter().enumerate() {
                    for (st, x) in stats.iter().zip(v) {
                        out.replicates.rows.push(ResultRow::rep(k, &format!("{};lambda={lam}", st.as_str()), "statistic", *x));
                    }
                }
                if reps == 0 {
                    continue;
                }
                for (i, st) in stats.iter().enumerate() {
                    let hits = alt.iter().filter(|v| v[i] > thr[i]).count();
                    let (pw, se) = proportion(hits, reps);
                    out.summary.rows.push(ResultRow::agg(&format!("{};lambda={lam}", st.as_str()), "power", pw, se));
                }
            }
        }
        other => return Err(Error::Config(format!("unknown scca mode {other:?}"))),
    }
    Ok(out)
}

/// Dispatch on the `experiment` key.
pub fn run_experiment(cfg: &Config, threads: usize) -> Result<ExperimentOutput> {
    match cfg.raw("experiment").unwrap_or("size_power") {
        "size_power" => run_size_power(cfg, threads),
        "length_sweep" => run_length_sweep(cfg, threads),
        "phase_diagram" => run_phase_diagram(cfg, threads),
        "prior" => run_prior(cfg, threads),
        "lowdeg" => run_lowdeg(cfg, threads),
        "scca" => run_scca(cfg, threads),
        other => Err(Error::Config(format!("unknown experiment {other:?}"))),
    }
}

/// Rate functionals of the configured loading.
pub fn run_profile(cfg: &Config) -> Result<ExperimentOutput> {
    let n: usize = cfg.require("n")?;
    let p: usize = cfg.require("p")?;
    let k_u: usize = cfg.require("k_u")?;
    let d: usize = cfg.get("degree", 1)?;
    let xi = loading_from_config(cfg, p, k_u, cfg.get("seed", 1)?)?;
    let sum = profile::regime_and_cutoff(&xi, k_u, n, p, d)?;
    let rb = profile::rate_bounds(&xi, k_u, n, p)?;
    let mut out = ExperimentOutput::new("profile", cfg);
    let rows = [
        ("zeta", sum.zeta),
        ("lambda", sum.lambda),
        ("j1", sum.j1 as f64),
        ("nu1", sum.nu1),
        ("nu2", sum.nu2),
        ("k_eff", sum.k_eff as f64),
        ("nu3", sum.nu3),
        ("m_star", sum.m_star as f64),
        ("upper_rate", rb.upper),
        ("lower_rate", rb.lower),
        ("best_m", rb.best_m as f64),
    ];
    for (k, v) in rows {
        out.summary.rows.push(ResultRow::agg("", k, v, 0.0));
    }
    let mut ts: Vec<usize> = (0..24).map(|i| (p as f64).powf(i as f64 / 23.0).round() as usize).collect();
    ts.dedup();
    for t in ts {
        out.summary.rows.push(ResultRow::agg(&format!("t={t}"), "top_norm", profile::top_norm(&xi, t as f64), 0.0));
    }
    out.extra = serde_json::to_value(&sum).map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}

/// Dataset from the `data` key (CSV or binary), else generated from the regression keys.
///
/// The returned setup carries the loading, design and method keys; for file
/// input `n` and `p` are taken from the file.
fn dataset_from_config(cfg: &Config) -> Result<(Dataset, RegressionSetup, bool)> {
    match cfg.raw("data") {
        Some(path) => {
            let data = Dataset::load(Path::new(path))?;
            let mut c = cfg.clone();
            c.set("n", data.n());
            c.set("p", data.p());
            if c.raw("t0").is_none() {
                return Err(Error::Config("missing key t0".into()));
            }
            Ok((data, RegressionSetup::from_config(&c)?, true))
        }
        None => {
            let setup = RegressionSetup::from_config(cfg)?;
            Ok((setup.dataset(0)?, setup, false))
        }
    }
}

/// Scaled Lasso fit of one dataset.
pub fn run_fit(cfg: &Config) -> Result<ExperimentOutput> {
    let (data, _, _) = dataset_from_config(cfg)?;
    let opts = crate::estimators::LassoOptions { sigma_floor: cfg.get("sigma_floor", 0.0)?, ..Default::default() };
    let fit = crate::estimators::scaled_lasso_with(&data, &opts)?;
    let mut out = ExperimentOutput::new("fit", cfg);
    for (j, b) in fit.beta_hat.iter().enumerate() {
        if *b != 0.0 {
            out.replicates.rows.push(ResultRow::rep(0, &format!("j={j}"), "beta_hat", *b));
        }
    }
    out.summary.rows.push(ResultRow::agg("", "sigma_hat", fit.sigma_hat, 0.0));
    out.summary.rows.push(ResultRow::agg("", "iterations", fit.iterations as f64, 0.0));
    out.summary.rows.push(ResultRow::agg("", "converged", fit.converged as u8 as f64, 0.0));
    if let Some(k_u) = cfg.raw("k_u").and_then(|v| v.parse::<usize>().ok()) {
        let xi = loading_from_config(cfg, data.p(), k_u, cfg.get("seed", 1)?)?;
        let proj = crate::estimators::projection_direction(
            &crate::estimators::sample_cov(&data),
            &xi,
            cfg.get("c_xi", crate::estimators::DEFAULT_C_XI)?,
            data.n(),
        );
        out.summary.rows.push(ResultRow::agg("", "u_hat_norm2", proj.u_hat.norm(), 0.0));
        out.summary.rows.push(ResultRow::agg("", "u_hat_objective", proj.objective, 0.0));
        out.summary.rows.push(ResultRow::agg("", "projection_feasible", proj.feasible as u8 as f64, 0.0));
        if cfg.get("spiked", false)? {
            let sp = crate::estimators::spiked_cov_estimate(&data, k_u, &SpikedOptions::default())?;
            for j in &sp.b_hat {
                out.summary.rows.push(ResultRow::agg(&format!("j={j}"), "spike_support", 1.0, 0.0));
            }
            out.summary.rows.push(ResultRow::agg("", "spike_fell_back", sp.fell_back_identity as u8 as f64, 0.0));
        }
    }
    Ok(out)
}

/// One test decision for `H0: xi' beta = t0` with the interval named by `method`.
pub fn run_test(cfg: &Config) -> Result<ExperimentOutput> {
    let (data, setup, _) = dataset_from_config(cfg)?;
    let t0: f64 = cfg.get("t0", setup.truth)?;
    let (ci, m, feasible) = setup.interval(&data, 0)?;
    let dec = inference::TestDecision::from_interval(ci, t0, m, feasible);
    let mut out = ExperimentOutput::new("test", cfg);
    let s = &mut out.summary.rows;
    s.push(ResultRow::agg("", "reject", dec.reject as u8 as f64, 0.0));
    s.push(ResultRow::agg("", "center", dec.interval.center, 0.0));
    s.push(ResultRow::agg("", "radius", dec.interval.radius, 0.0));
    s.push(ResultRow::agg("", "m_used", dec.m_used as f64, 0.0));
    s.push(ResultRow::agg("", "level", dec.interval.level, 0.0));
    for (name, a) in &dec.interval.budget {
        s.push(ResultRow::agg(&format!("budget={name}"), "error_probability", *a, 0.0));
    }
    out.extra = serde_json::to_value(&dec).map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}
