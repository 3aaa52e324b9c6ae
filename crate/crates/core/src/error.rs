use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("Newton iteration failed to converge ({seeds} seeds tried): {detail}")]
    NonConvergence { seeds: usize, detail: String },
    #[error("equilibrium is not a saddle: {0}")]
    NotASaddle(String),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("trajectory diverged at t = {t} (|x| = {norm:e})")]
    Divergence { t: f64, norm: f64 },
    #[error("orbit escaped: {0}")]
    Escaped(String),
    #[error("point ({phi}, {r}) lies on the stable manifold")]
    OnStableManifold { phi: f64, r: f64 },
    #[error("point ({phi}, {r}) leaves the isolating block (radial value {value} > {limit})")]
    BlockOverflow { phi: f64, r: f64, value: f64, limit: f64 },
    #[error("profile is not monotonically decreasing on the window (witness phi = {phi})")]
    NotMonotone { phi: f64 },
    #[error("no decreasing window: {0}")]
    NoWindow(String),
    #[error("verification failed: {condition} (witness: {witness})")]
    VerificationFailed { condition: String, witness: String },
    #[error("nested intersection is empty: {0}")]
    NotFound(String),
    #[error("invariant circle fit failed: {0}")]
    FitFailed(String),
    #[error("quantity undefined: {0}")]
    Undefined(String),
}

/// Coarse failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Verification,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Invalid(_) | Error::Config(_) | Error::Io(_) | Error::NoWindow(_) => {
                ErrorClass::Validation
            }
            Error::NotMonotone { .. } => ErrorClass::Validation,
            Error::VerificationFailed { .. } | Error::NotFound(_) => ErrorClass::Verification,
            _ => ErrorClass::Numerical,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
