use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid norm exponent p = {0} (need p >= 1)")]
    InvalidExponent(f64),

    #[error("non-finite value in field at index {0}")]
    NonFinite(usize),

    #[error("no bound state: lowest eigenvalue {lowest:.3e} is not below -1e-6")]
    NoBoundState { lowest: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("energy {0} is not below the continuous spectrum (need E < -1e-3)")]
    EInSpectrum(f64),

    #[error("amplitude |a| = {value:.4e} outside branch range [0, {max:.4e}]")]
    OutOfRange { value: f64, max: f64 },

    #[error("energy root left the window: E = {energy:.6e}, window ({lo:.6e}, {hi:.6e})")]
    RootOutsideWindow { energy: f64, lo: f64, hi: f64 },

    #[error("blow-up detected at t = {time:.4}: sup norm grew from {initial:.3e} to {current:.3e}")]
    BlowupDetected {
        time: f64,
        initial: f64,
        current: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate design matrix (condition number {0:.3e})")]
    DegenerateDesign(f64),

    #[error("missing norm series: {0}")]
    MissingSeries(String),

    #[error("invalid space descriptor: {0}")]
    InvalidSpace(String),

    #[error("coefficient path violation: {0}")]
    PathRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn non_convergence(what: impl Into<String>, iterations: usize, residual: f64) -> Self {
        Error::NonConvergence {
            what: what.into(),
            iterations,
            residual,
        }
    }
}
