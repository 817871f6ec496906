use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("loading vector is identically zero")]
    AllZeroLoading,
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("cholesky factorisation failed after jitter retry")]
    CholeskyFailure,
    #[error("could not bracket the root after 200 doublings")]
    BracketFailure,
    #[error("scaled lasso residual is exactly zero, noise level undefined")]
    ZeroResidualDegenerate,
    #[error("subset enumeration exceeded the cap of {cap} combinations")]
    BudgetExceeded { cap: u64 },
    #[error("sample size {0} is odd, cannot split into halves")]
    OddSampleSize(usize),
    #[error("kappa = {0} lies outside (0, 1]")]
    KappaOutOfRange(f64),
    #[error("regime violation: need 8 <= 2 k_u < k_eff <= p (k_u = {k_u}, k_eff = {k_eff}, p = {p})")]
    RegimeViolation { k_u: usize, k_eff: usize, p: usize },
    #[error("chi-square integral diverges (determinant argument not positive)")]
    DivergentIntegral,
    #[error("hermite enumeration needs {0} indices, over budget")]
    SizeBudget(u64),
    #[error("instance has {0} rows; the reduction consumes rows in pairs")]
    OddPairCount(usize),
    #[error("scan enumeration needs {0} row subsets, over budget")]
    ScanBudgetExceeded(u64),
    #[error("multiscale profile needs L^3 <= c0 k_u")]
    MultiscaleConstraint,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Configuration problems map to exit code 2, everything numerical to 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidInput(_) | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
