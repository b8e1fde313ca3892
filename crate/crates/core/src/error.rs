use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "grid too small for the derivative stencil: {axis} axis has {len} sites, need at least 3"
    )]
    StencilTooSmall { axis: &'static str, len: usize },

    #[error("mismatched grids: {0}")]
    GridMismatch(String),

    #[error("field has zero norm; expectation values are undefined")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("denominator {value:e} is consistent with zero (standard error {stderr:e})")]
    DegenerateDenominator { value: f64, stderr: f64 },

    #[error("no mutually spacelike sample found after {attempts} attempts")]
    NoSpacelikeSupport { attempts: usize },

    #[error("eigenbasis requires a Hermitian Hamiltonian: {0}")]
    NonHermitian(String),

    #[error("unstable propagation: slice norm drifted by {drift:e} even with {substeps} substeps")]
    UnstablePropagation { drift: f64, substeps: usize },

    #[error("time step {dt} does not resolve the oscillation period {period} ({steps_per_period:.1} steps, need {required})")]
    UnresolvedOscillation {
        dt: f64,
        period: f64,
        steps_per_period: f64,
        required: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
