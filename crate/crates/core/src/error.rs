use thiserror::Error;

/// Errors produced by the analysis library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("unphysical fit: 1/q_total = {inv_total:e} <= cos(phi)/q_ext = {coupling:e}")]
    UnphysicalFit { inv_total: f64, coupling: f64 },

    #[error("insufficient span: {0}")]
    InsufficientSpan(String),

    #[error("no resonance found: dip depth {depth:e} below {threshold:e}")]
    NoResonance { depth: f64, threshold: f64 },

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("shirley background did not converge after {iterations} iterations (last change {last_change:e})")]
    ShirleyNotConverged {
        iterations: usize,
        last_change: f64,
        background: Vec<f64>,
    },

    #[error("opaque overlayer: substrate area is zero, thickness unbounded")]
    OpaqueOverlayer,

    #[error("no positive solution: {0}")]
    NoPositiveSolution(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} is not finite ({value})")))
    }
}
