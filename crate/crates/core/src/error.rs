use thiserror::Error;

use crate::ode::OdeError;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("integrator failure: {0}")]
    Integrator(#[from] OdeError),

    #[error("orbit left the invariant region at a={a:.6e}, b={b:.6e} (eta={eta:.4}); reduce eps or check the seed orientation")]
    RegionExit { a: f64, b: f64, eta: f64 },

    #[error("node tail not resolved: {0}")]
    UnresolvedTail(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("insufficient range: {0}")]
    InsufficientRange(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("positivity failure: strain rate {u:.3e} at x={x:.4} (t={t:.6})")]
    Positivity { t: f64, x: f64, u: f64 },

    #[error("step size {h:.3e} underflowed at t={t:.6}: the system is stiff at this resolution, rerun with the implicit scheme")]
    StepUnderflow { t: f64, h: f64 },

    #[error("singular linear system at row {0}")]
    Singular(usize),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Domain(_) => "domain",
            Error::Overflow(_) => "overflow",
            Error::EmptyDomain(_) => "empty_domain",
            Error::Integrator(_) => "integrator",
            Error::RegionExit { .. } => "region_exit",
            Error::UnresolvedTail(_) => "unresolved_tail",
            Error::UnsupportedRegime(_) => "unsupported_regime",
            Error::InsufficientRange(_) => "insufficient_range",
            Error::OutOfRange(_) => "out_of_range",
            Error::Positivity { .. } => "positivity",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::Singular(_) => "singular",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
