use thiserror::Error;

use crate::lattice::WaveVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpError {
    #[error("wave vector ({n1}, {n2}) has zero first component")]
    ZeroFirstComponent { n1: i32, n2: i32 },

    #[error("k + l = {sum:?} does not equal n = {n:?}")]
    NotATriad {
        n: WaveVector,
        sum: (i32, i32),
    },

    #[error("fields live on different lattice boxes")]
    BoxMismatch,

    #[error("wave vector {0:?} lies outside the lattice box")]
    OutsideBox(WaveVector),

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("sample {index} failed: {source}")]
    SampleFailed {
        index: u64,
        #[source]
        source: Box<KpError>,
    },

    #[error("fixed-point iteration does not contract (residual {residual:e} after {iterations} iterations)")]
    NonContraction { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not reach tolerance in {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("trajectory has {got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("eps must be nonzero")]
    ZeroEps,

    #[error("profile is identically zero")]
    ZeroProfile,

    #[error("moment relation m4 = 2 m2^2 required (got m2 = {m2}, m4 = {m4})")]
    NonGaussianMoments { m2: f64, m4: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, KpError>;
