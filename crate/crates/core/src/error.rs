use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate vector field: delta = a2*b0 - a0*b2 vanishes")]
    DegenerateDelta,
    #[error("infinite-measure regime unsupported: need a2 > b2 (got a2 = {a2}, b2 = {b2})")]
    InfiniteMeasure { a2: f64, b2: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular homogeneous function at the origin (rho = {rho})")]
    Singularity { rho: f64 },
    #[error("quadrature did not reach tolerance: estimate {value}, error bound {error}")]
    Quadrature { value: f64, error: f64 },
    #[error("entry point ({xi}, {eta}) outside the chart of radius {eps}")]
    OutsideChart { xi: f64, eta: f64, eps: f64 },
    #[error("requested passage time {requested} below the minimal passage time {minimum}")]
    BelowMinimalPassage { requested: f64, minimum: f64 },
    #[error("root finder failed: {0}")]
    RootFinding(String),
    #[error("step size underflow at t = {t} (state {state:?})")]
    StepUnderflow { t: f64, state: Vec<f64> },
    #[error("orbit did not return within the cap {cap} (last point {last:?})")]
    NoReturn { cap: f64, last: (f64, f64) },
    #[error("too few exceedances for tail fit: {got} (need at least {need})")]
    TooFewExceedances { got: usize, need: usize },
    #[error("inadmissible parameters for {case}: {reason}")]
    Inadmissible { case: &'static str, reason: String },
    #[error("non-convergence after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },
    #[error("variance estimate unstable: {0}")]
    UnstableVariance(String),
    #[error("ulam partition leakage {leakage} exceeds {threshold}")]
    Leakage { leakage: f64, threshold: f64 },
    #[error("pressure bracket failure: lambda(0, s) = {lambda} <= 1")]
    Bracket { lambda: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
