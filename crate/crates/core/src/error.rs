use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("convolution of a {rows}x{cols} field with stride {stride:?} has no output points")]
    EmptyOutput { rows: usize, cols: usize, stride: (usize, usize) },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("level {level} out of range, network has {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("non-positive diagonal entry {value} at level {level}")]
    NonPositiveDiagonal { level: usize, value: f64 },

    #[error("model {0} has no trainable kernels")]
    NotTrainable(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dense oracle is capped at {cap} unknowns, requested {requested}")]
    OracleCap { cap: usize, requested: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
