use thiserror::Error;

/// Errors produced by the solvers, samplers and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite integrand at x = {x}")]
    NonFiniteIntegrand { x: f64 },

    #[error("unstable tail at x = {x}; widen tolerance or shrink domain")]
    UnstableTail { x: f64 },

    #[error("admissibility violation: {0}")]
    Admissibility(String),

    #[error("divergence at step {step}: state left the finite/bounded region")]
    Divergence { step: u64 },

    #[error("internal error: thinning bound too small (rate {rate} > bound {bound})")]
    ThinningBound { rate: f64, bound: f64 },

    #[error("empty observation window")]
    EmptyWindow,

    #[error("series too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("potential not even or grid asymmetric")]
    ParityAmbiguity,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("simulation failed at beta = {beta}, seed = {seed}: {source}")]
    Replicate {
        beta: f64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Strips replicate annotations and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Replicate { source, .. } => source.root(),
            other => other,
        }
    }
}
