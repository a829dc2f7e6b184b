use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scheme outside its stable regime: gamma*dt/(2m) = {ratio} >= 1")]
    UnstableScheme { ratio: f64 },

    #[error("simulation diverged at step {step}")]
    DivergedSimulation { step: usize },

    #[error("degenerate radius: |x| below {0:e} in radial force mode")]
    DegenerateRadius(f64),

    #[error("parameter vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("index {index} out of range (valid up to {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("adjoint blow-up: non-finite cotangent at step {step}")]
    AdjointBlowup { step: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("fragment provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("fragment out of bounds: {0}")]
    FragmentBounds(String),

    #[error("protocol output carries no seed slices")]
    MissingSeedSlices,

    #[error("non-finite gradient in channel {channel}")]
    NonFiniteGradient { channel: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
