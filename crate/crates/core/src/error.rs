use thiserror::Error;

/// Errors raised by the quantification library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("not a point of the probability simplex: {0}")]
    NotASimplexPoint(String),

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few examples: {0}")]
    TooFewExamples(String),

    #[error("empty reference set")]
    EmptyReferenceSet,

    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("degenerate Gram statistics: {0}")]
    DegenerateGram(String),

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("linear system is singular or rank deficient")]
    SingularSystem,

    #[error("impossible target: class {0} has positive prevalence but an empty pool")]
    ImpossibleTarget(usize),

    #[error("Dirichlet fit did not converge")]
    NoConvergence,

    #[error("quantifier used before fit")]
    NotFitted,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = QuantError> = std::result::Result<T, E>;
