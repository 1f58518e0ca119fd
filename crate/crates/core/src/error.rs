use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scale recursion collapses at level {level}: ell_{level} = 5*floor({l}^a/5) = 0")]
    ScaleCollapse { level: usize, l: u64 },

    #[error("scale L_{level} exceeds 2^53 and cannot be stored exactly")]
    ScaleOverflow { level: usize },

    #[error("unknown envelope kind `{0}`")]
    UnknownEnvelope(String),

    #[error("ellipticity cannot be guaranteed: eigenvalue bound [{lower}, {upper}] is not inside [1/nu, nu] with nu = {nu}")]
    Ellipticity { lower: f64, upper: f64, nu: f64 },

    #[error("active box too small: need half-width {needed}, have {available}")]
    BoxTooSmall { needed: f64, available: f64 },

    #[error("point {point:?} lies outside the evaluable region of the active box")]
    OutOfBox { point: Vec<f64> },

    #[error("path left the active box at step {step} (t = {time})")]
    PathExit { step: usize, time: f64 },

    #[error("non-finite state encountered at step {step}")]
    NonFinite { step: usize },

    #[error("explicit scheme unstable: dt = {dt} exceeds limit {limit}")]
    Stability { dt: f64, limit: f64 },

    #[error("stencil not monotone at {point:?}: {reason}")]
    NotMonotone { point: Vec<f64>, reason: String },

    #[error("insufficient margin: need {needed} cells, grid has {available}")]
    Margin { needed: usize, available: usize },

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("work estimate {estimate:.3e} exceeds budget ceiling {ceiling:.3e}")]
    Budget { estimate: f64, ceiling: f64 },

    #[error("truncation horizon {horizon} leaves tail e^-T = {tail:.3e} above tolerance {tolerance:.3e}")]
    Truncation { horizon: f64, tail: f64, tolerance: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
