//! Parameter points, datasets and the joint covariance parametrisation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Loading vector stored sorted by decreasing magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingVector {
    coords: Vec<f64>,
    perm: Vec<usize>,
    k_xi: usize,
}

impl LoadingVector {
    /// Sort `raw` by |.| descending. Ties keep their original order.
    pub fn new(raw: &[f64]) -> Result<Self> {
        if raw.iter().all(|&v| v == 0.0) {
            return Err(Error::AllZeroLoading);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("loading has non-finite entries".into()));
        }
        let mut perm: Vec<usize> = (0..raw.len()).collect();
        // sort_by is stable
        perm.sort_by(|&a, &b| raw[b].abs().total_cmp(&raw[a].abs()));
        let coords: Vec<f64> = perm.iter().map(|&i| raw[i]).collect();
        let k_xi = coords.iter().filter(|v| **v != 0.0).count();
        Ok(Self { coords, perm, k_xi })
    }

    /// Sorted coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `perm[j]` is the original index of sorted coordinate `j`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn k_xi(&self) -> usize {
        self.k_xi
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinates back in the original order.
    pub fn raw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.coords.len()];
        for (j, &i) in self.perm.iter().enumerate() {
            out[i] = self.coords[j];
        }
        out
    }

    pub fn norm2(&self) -> f64 {
        linalg::norm2(&self.coords)
    }

    pub fn norm_inf(&self) -> f64 {
        self.coords[0].abs()
    }

    /// Split into the top-`m` part and the remainder, both in original order.
    pub fn split_top(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.coords.len();
        let m = m.min(p);
        let mut head = vec![0.0; p];
        let mut tail = vec![0.0; p];
        for (j, &i) in self.perm.iter().enumerate() {
            if j < m {
                head[i] = self.coords[j];
            } else {
                tail[i] = self.coords[j];
            }
        }
        (head, tail)
    }
}

pub fn make_loading(raw: &[f64]) -> Result<LoadingVector> {
    LoadingVector::new(raw)
}

/// A point `(beta, Sigma, sigma)` of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub sigma_cov: DMatrix<f64>,
    pub noise_sd: f64,
    pub m1: f64,
    pub m2: f64,
}

impl ModelParams {
    pub fn new(beta: DVector<f64>, sigma_cov: DMatrix<f64>, noise_sd: f64) -> Self {
        Self { beta, sigma_cov, noise_sd, m1: 10.0, m2: 10.0 }
    }

    pub fn with_constants(mut self, m1: f64, m2: f64) -> Self {
        self.m1 = m1;
        self.m2 = m2;
        self
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Whether the eigenvalues of Sigma lie in `[1/M1, M1]` and `0 < sigma <= M2`.
    pub fn in_window(&self) -> bool {
        let ev = linalg::sym_eigenvalues(&self.sigma_cov);
        let lo = ev.first().copied().unwrap_or(1.0);
        let hi = ev.last().copied().unwrap_or(1.0);
        lo >= 1.0 / self.m1 && hi <= self.m1 && self.noise_sd > 0.0 && self.noise_sd <= self.m2
    }

    /// Number of nonzero coefficients.
    pub fn sparsity(&self) -> usize {
        self.beta.iter().filter(|v| **v != 0.0).count()
    }
}

/// Observed design and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Self { x, y, seed: None })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Dataset { x, y, seed: self.seed }
    }

    /// Translate the response by a known coefficient shift: `(Y - X b, X)`.
    pub fn shift_response(&self, b: &DVector<f64>) -> Dataset {
        Dataset { x: self.x.clone(), y: &self.y - &self.x * b, seed: self.seed }
    }

    /// CSV with a header row `y,x1,...,xp`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y");
        for j in 0..self.p() {
            s.push_str(&format!(",x{}", j + 1));
        }
        s.push('\n');
        for i in 0..self.n() {
            s.push_str(&format!("{}", self.y[i]));
            for j in 0..self.p() {
                s.push_str(&format!(",{}", self.x[(i, j)]));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty csv".into()))?;
        let cols = header.split(',').count();
        if cols < 2 {
            return Err(Error::InvalidInput("csv needs a response and at least one column".into()));
        }
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for (ln, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::InvalidInput(format!("row {}: {e}", ln + 2)))?;
            if vals.len() != cols {
                return Err(Error::InvalidInput(format!("row {} has {} fields", ln + 2, vals.len())));
            }
            ys.push(vals[0]);
            xs.extend_from_slice(&vals[1..]);
        }
        let n = ys.len();
        let x = DMatrix::from_row_slice(n, cols - 1, &xs);
        Dataset::new(x, DVector::from_vec(ys))
    }

    /// Column-major little-endian container: magic, n, p, y, then X by column.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"ADTD")?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p() as u64).to_le_bytes())?;
        for v in self.y.iter().chain(self.x.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ADTD" {
            return Err(Error::InvalidInput("bad dataset container magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let p = u64::from_le_bytes(word) as usize;
        let mut next = || -> Result<f64> {
            r.read_exact(&mut word)?;
            Ok(f64::from_le_bytes(word))
        };
        let y: Vec<f64> = (0..n).map(|_| next()).collect::<Result<_>>()?;
        let x: Vec<f64> = (0..n * p).map(|_| next()).collect::<Result<_>>()?;
        Dataset::new(DMatrix::from_column_slice(n, p, &x), DVector::from_vec(y))
    }

    /// Binary when the file starts with the container magic, CSV otherwise.
    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"ADTD") {
            return Dataset::read_binary(bytes.as_slice());
        }
        let text = String::from_utf8(bytes).map_err(|_| Error::InvalidInput("dataset is neither binary nor UTF-8 CSV".into()))?;
        Dataset::from_csv(&text)
    }
}

/// Covariance of `(Y, X)`; index 0 is the response.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub sigma_z: DMatrix<f64>,
}

impl JointCovariance {
    pub fn new(sigma_z: DMatrix<f64>) -> Self {
        Self { sigma_z }
    }

    pub fn p(&self) -> usize {
        self.sigma_z.nrows() - 1
    }

    pub fn yy(&self) -> f64 {
        self.sigma_z[(0, 0)]
    }

    pub fn xy(&self) -> DVector<f64> {
        self.sigma_z.view((1, 0), (self.p(), 1)).column(0).into_owned()
    }

    pub fn xx(&self) -> DMatrix<f64> {
        self.sigma_z.view((1, 1), (self.p(), self.p())).into_owned()
    }
}

/// Map a joint covariance to `(beta, Sigma, sigma)`.
pub fn h_map(jc: &JointCovariance) -> Result<ModelParams> {
    let sxx = jc.xx();
    let sxy = jc.xy();
    let chol = nalgebra::Cholesky::new(sxx.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("design block".into()))?;
    let beta = chol.solve(&sxy);
    let schur = jc.yy() - sxy.dot(&beta);
    if schur <= 0.0 || !schur.is_finite() {
        return Err(Error::NotPositiveDefinite(format!("schur complement {schur}")));
    }
    Ok(ModelParams::new(beta, sxx, schur.sqrt()))
}

/// Inverse of [`h_map`].
pub fn h_inv(theta: &ModelParams) -> JointCovariance {
    let p = theta.p();
    let sb = &theta.sigma_cov * &theta.beta;
    let mut z = DMatrix::zeros(p + 1, p + 1);
    z[(0, 0)] = theta.beta.dot(&sb) + theta.noise_sd * theta.noise_sd;
    for i in 0..p {
        z[(0, i + 1)] = sb[i];
        z[(i + 1, 0)] = sb[i];
    }
    z.view_mut((1, 1), (p, p)).copy_from(&theta.sigma_cov);
    JointCovariance::new(z)
}

/// Draw `n` rows with `X ~ N(0, Sigma)` and `Y = X beta + eps`.
pub fn generate_dataset(theta: &ModelParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let p = theta.p();
    let l = linalg::cholesky_jitter(&theta.sigma_cov)?.unpack();
    let mut r = rng::stream(seed, 0);
    // row-major draw order keeps the stream layout independent of storage
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut r);
        }
    }
    let x = z * l.transpose();
    let mut y: DVector<f64> = &x * &theta.beta;
    for i in 0..n {
        let e: f64 = StandardNormal.sample(&mut r);
        y[i] += theta.noise_sd * e;
    }
    Ok(Dataset { x, y, seed: Some(seed) })
}

/// The problem `H0: xi' beta = t0` with sparsity bound and error budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct TestProblem {
    pub xi: LoadingVector,
    pub t0: f64,
    pub k_u: usize,
    pub alpha: f64,
    pub eta: f64,
}

impl TestProblem {
    pub fn new(xi: LoadingVector, t0: f64, k_u: usize, alpha: f64, eta: f64) -> Result<Self> {
        if k_u == 0 {
            return Err(Error::InvalidInput("k_u must be positive".into()));
        }
        if !(alpha > 0.0 && eta > 0.0 && alpha + eta < 1.0) {
            return Err(Error::InvalidInput("need alpha, eta > 0 and alpha + eta < 1".into()));
        }
        Ok(Self { xi, t0, k_u, alpha, eta })
    }
}
