use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ordering parameters out of range: s_x = {s_x}, s_y = {s_y}")]
    OrderingOutOfRange { s_x: f64, s_y: f64 },
    #[error("window too small: boundary value {boundary:e} exceeds {limit:e}")]
    WindowTooSmall { boundary: f64, limit: f64 },
    #[error("grid geometry or ordering mismatch")]
    GridMismatch,
    #[error("non-finite Skellam parameters m1 = {m1}, m2 = {m2}")]
    NonFiniteParams { m1: f64, m2: f64 },
    #[error("Gaussian approximation needs m1 + m2 >= 25, got {0}")]
    ApproximationDomain(f64),
    #[error("setup has no channels")]
    EmptySetup,
    #[error("all pump amplitudes vanish")]
    ZeroPump,
    #[error("outcome set has {got} entries, setup has {expected} channels")]
    OutcomeLength { expected: usize, got: usize },
    #[error("invalid channel {index}: {reason}")]
    InvalidChannel { index: usize, reason: String },
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    #[error("marginal route requires an X-only setup with real squeezing")]
    PartitionViolation,
    #[error("quadrature did not reach relative tolerance {tol:e} (last change {change:e})")]
    QuadratureNonConvergent { tol: f64, change: f64 },
    #[error("probability {0:e} below floor")]
    NegativeProbability(f64),
    #[error("outcome probability {0:e} too small to condition on")]
    VanishingOutcomeProbability(f64),
    #[error("one quadrature set carries no pump; limit is a quadrature eigenstate")]
    DegeneratePartition,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("posterior evidence underflowed on every node")]
    ZeroEvidence,
    #[error("family member exceeds the Fock truncation (tail mass {0:e})")]
    TruncationOverflow(f64),
    #[error("initial state is not pure")]
    NonPureInitial,
    #[error("unsupported family for this reference")]
    UnsupportedFamily,
    #[error("truncation breach on mode {mode}: top-level population {tail:e}")]
    TruncationBreach { mode: usize, tail: f64 },
    #[error("outside the validated oracle envelope: {0}")]
    EnvelopeRefusal(String),
    #[error("re-gridding lost mass {0:e}")]
    RegridLoss(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
