use thiserror::Error;

use crate::tensor::LegLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate leg label {0}")]
    DuplicateLeg(LegLabel),

    #[error("leg {0} is not present on the operator")]
    UnknownLeg(LegLabel),

    #[error("requested leg order is not a permutation of the operator's legs")]
    NotPermutation,

    #[error("operator is not Hermitian (max |A - A^dag| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "support violation: sigma eigenvalue {eigenvalue:.3e} carries rho mass {mass:.3e} (tolerance 1e-9)"
    )]
    Support { eigenvalue: f64, mass: f64 },

    #[error("invalid device model: {0}")]
    InvalidModel(String),

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("simulated dimension {dim} exceeds the limit {limit} ({detail})")]
    DimensionOverflow { dim: usize, limit: usize, detail: String },

    #[error("snapshot stream exhausted: plan needs {needed} shots, {available} available")]
    StreamExhausted { needed: u64, available: u64 },

    #[error("expectation set is not informationally complete: missing {missing} free observables")]
    NotInformationallyComplete { missing: usize },

    #[error("shot file format error: {0}")]
    Format(String),

    #[error("shot file header mismatch on `{field}`: config has {expected}, file has {found}")]
    HeaderMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("shot file truncated: header declares {declared} shots, only {available} present")]
    Truncated { declared: u64, available: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("reconstruction did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation failures map to exit code 2, non-convergence to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Phase { source, .. } => source.exit_code(),
            Error::NonConvergence { .. } => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }

    /// Attributes the error to an experiment phase.
    pub fn in_phase(self, phase: &'static str) -> Self {
        match self {
            e @ Error::Phase { .. } => e,
            e => Error::Phase { phase, source: Box::new(e) },
        }
    }
}
