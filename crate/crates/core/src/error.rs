use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {dim} exceeds the limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("invalid term: {0}")]
    InvalidTerm(String),

    #[error("invalid gadget parameters: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("auxiliary minimizer for data configuration {data} is not unique (gap {gap:e})")]
    NonUniqueMinimizer { data: String, gap: f64 },

    #[error("auxiliary configuration {aux} for data {data} is not a staircase with {expected} ones")]
    StaircaseViolation { data: String, aux: String, expected: usize },

    #[error("vanishing energy denominator between {r} and {q}")]
    VanishingDenominator { r: String, q: String },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("Krylov propagation did not reach tolerance {tol:e} (step shrank to {step:e})")]
    KrylovNonConvergence { tol: f64, step: f64 },

    #[error("optimizer bracket failure: {0}")]
    Bracket(String),

    #[error("state is not invariant under data-qubit permutations (residual {0:e})")]
    NotPermutationSymmetric(f64),

    #[error("unsupported term for this operation: {0}")]
    UnsupportedTerm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
