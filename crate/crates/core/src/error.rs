use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid probabilities in {what}: {detail}")]
    InvalidProbability { what: &'static str, detail: String },

    #[error("invalid value for {what}: {detail}")]
    InvalidValue { what: &'static str, detail: String },

    #[error("chain is not ergodic (strongly connected and aperiodic)")]
    NonErgodic,

    #[error("chain is not episodic: spectral radius bound {radius}")]
    NonEpisodic { radius: f64 },

    #[error("solver failed: {detail}")]
    SolverFailure { detail: String },

    #[error("discount {0} outside its admissible range")]
    InvalidDiscount(f64),

    #[error("zero denominator at state {state}")]
    ZeroDenominator { state: usize },

    #[error("normalizer {0} is degenerate")]
    DegenerateMass(f64),

    #[error("weighted Gram matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("iteration diverged at step {step} (max |entry| = {magnitude:e})")]
    Diverged { step: usize, magnitude: f64 },

    #[error("precondition violated: operator norm {norm} is not below {limit}")]
    PreconditionViolated { norm: f64, limit: f64 },

    #[error("bound violated: measured {measured} exceeds bound {bound}")]
    BoundViolated { measured: f64, bound: f64 },

    #[error("weighted simplex constraints are infeasible")]
    Infeasible,

    #[error("need at least 2 samples for an unbiased estimate, got {0}")]
    InsufficientSamples(usize),

    #[error("slot {slot} is not occupied (buffer holds {len} entries)")]
    InvalidSlot { slot: usize, len: usize },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("replay buffer has zero total priority")]
    ZeroMass,

    #[error("replay buffer holds {len} entries, need {required} before training")]
    BufferNotWarm { len: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
