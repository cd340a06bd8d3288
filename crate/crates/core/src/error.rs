use thiserror::Error;

#[derive(Debug, Error)]
pub enum VamohError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("coordinate mismatch: {0}")]
    CoordinateMismatch(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("degenerate planar layer: |w| = {norm:e}")]
    DegenerateLayer { norm: f64 },

    #[error("root finding did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {term}: {detail}")]
    NonFinite { term: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown dataset synthesizer `{0}`")]
    UnknownDataset(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("gradient unavailable: {0}")]
    NoGradient(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VamohError> = std::result::Result<T, E>;
