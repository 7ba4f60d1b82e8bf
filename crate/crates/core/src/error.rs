use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient norm {norm:e} below 1e-12 at ascent step {step}")]
    DegenerateGradient { step: usize, norm: f64 },

    #[error("degenerate slerp frame: psi = {psi}")]
    DegenerateFrame { psi: f64 },

    #[error("all {0} alpha probes produced non-finite losses")]
    ProbeFailure(usize),

    #[error("dimension {0} too large for a dense Hessian (limit {max})", max = crate::autodiff::MAX_HESSIAN_DIM)]
    DimensionTooLarge(usize),

    #[error("Hessian asymmetry {0:e} exceeds tolerance")]
    Asymmetric(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rejected trial: {0}")]
    RejectedTrial(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
