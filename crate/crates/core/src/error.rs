use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quantile diverges at alpha = 1")]
    QuantileDiverges,
    #[error("invalid dof: {0}")]
    InvalidDof(usize),
    #[error("probability out of range: {0}")]
    InvalidProbability(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unregistered primitive `{0}`")]
    UnregisteredPrimitive(String),
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("shape error in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid spline knots: {0}")]
    InvalidKnots(String),
    #[error("expected {expected} raw spline parameters, got {got}")]
    RawParamLength { expected: usize, got: usize },
    #[error("non-finite input to the flow")]
    NonFiniteInput,
    #[error("non-finite target log-density at theta = {theta:?}")]
    NonFiniteTarget { theta: Vec<f64> },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("could not place {wanted} centers (placed {placed} after {tries} batches)")]
    CenterPlacement {
        wanted: usize,
        placed: usize,
        tries: usize,
    },
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("too many non-finite ELBO summands: {excluded} of {n}")]
    TooManyExcluded { excluded: usize, n: usize },
    #[error("all importance weights are zero")]
    DegenerateWeights,
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
