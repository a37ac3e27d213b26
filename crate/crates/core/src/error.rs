use thiserror::Error;

/// Errors raised by the channel, de Finetti and risk machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label `{0}` appears twice in one factorization")]
    LabelCollision(String),

    #[error("unknown factor label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not Hermitian (anti-Hermitian part {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("dimension {dim} exceeds the dense budget of {limit}")]
    DimensionOverflow { dim: usize, limit: usize },

    #[error("Kraus operators are not trace preserving (deviation {0:.3e})")]
    NotTracePreserving(f64),

    #[error("channel is signalling (residual {0:.3e})")]
    Signalling(f64),

    #[error("instance count {0} too large for exact permutation enumeration")]
    TooManyInstances(usize),

    #[error("alternating projections did not converge after {iters} iterations (psd {psd:.3e}, tp {tp:.3e}, ns {ns:.3e})")]
    NoConvergence { iters: usize, psd: f64, tp: f64, ns: f64 },

    #[error("POVM incomplete (deviation {0:.3e})")]
    PovmIncomplete(f64),

    #[error("extension is not permutation symmetric (deviation {0:.3e})")]
    AsymmetricInput(f64),

    #[error("no exact design for local dimension {d} and {n} copies")]
    DesignUnavailable { d: usize, n: usize },

    #[error("grid has {count} points but the symmetric subspace has dimension {needed}")]
    GridTooSmall { count: usize, needed: usize },

    #[error("marginal operator is singular (min eigenvalue {0:.3e} below cutoff)")]
    Singular(f64),

    #[error("POVM slack element not positive (min eigenvalue {0:.3e})")]
    SlackNotPsd(f64),

    #[error("invalid probability table: {0}")]
    InvalidDistribution(String),

    #[error("alphabet too large: {0} functions")]
    AlphabetTooLarge(u128),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
