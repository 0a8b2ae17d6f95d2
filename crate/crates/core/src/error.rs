use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}` (expected bargmann-fock, large-band or synthetic-test)")]
    UnknownModel(String),

    #[error("model `{model}` does not support dimension {dim}")]
    UnsupportedDimension { model: String, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("circulant embedding is not positive semidefinite: clipped mass {clipped:.3e} exceeds {limit:.3e}")]
    EmbeddingNotPsd { clipped: f64, limit: f64 },

    #[error("partition resolution {m} does not divide the {cells} fine cells per side")]
    Misaligned { m: usize, cells: usize },

    #[error("rectangle corner {0} is not on the partition lattice")]
    OffLattice(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("gamma2 must be positive, got {0}")]
    NonPositiveGamma2(f64),

    #[error("joint law of (f(0), f(x)) is degenerate at r = {r:.3e} (1 - r(x)^2 = {gap:.3e})")]
    DegenerateJoint { r: f64, gap: f64 },

    #[error("spectral moment matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("too few samples: got {got}, need at least {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("insufficient volume range: {0}")]
    InsufficientRange(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownModel(_)
            | Error::UnsupportedDimension { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidGrid(_)
            | Error::Misaligned { .. }
            | Error::OffLattice(_)
            | Error::ShapeMismatch(_)
            | Error::InvalidParameter(_)
            | Error::TooFewSamples { .. }
            | Error::InsufficientRange(_)
            | Error::Config(_) => 2,
            _ => 3,
        }
    }
}
