use thiserror::Error;

use crate::value::{ElementId, Value};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),

    #[error("unknown element {0}")]
    UnknownElement(ElementId),

    #[error("select needs at least one branch")]
    EmptySelect,

    #[error("select weight {0} is not positive")]
    NonPositiveWeight(f64),

    #[error("select weights sum to {0}, expected 1")]
    SelectNotNormalized(f64),

    #[error("select lists value {0} more than once")]
    DuplicateSelectValue(Value),

    #[error("apply needs at least one argument")]
    EmptyApply,

    #[error("element {element} is not {expected}")]
    WrongKind {
        element: ElementId,
        expected: &'static str,
    },

    #[error("element {element} takes {expected} arguments, got {actual}")]
    Arity {
        element: ElementId,
        expected: usize,
        actual: usize,
    },

    /// A user function attached to an Apply or Chain failed. Nested failures
    /// form the element path back to the outermost element.
    #[error("function of element {element} failed on input {input}")]
    FunctionFailed {
        element: ElementId,
        input: String,
        #[source]
        source: Box<Error>,
    },

    /// Raised from inside model functions.
    #[error("{0}")]
    Model(String),

    #[error("star bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")]
    InvalidStarBounds { lo: f64, hi: f64 },

    #[error("constraint weight {weight} on {element} for {value} is outside [0, 1]")]
    InvalidWeight {
        element: ElementId,
        value: Value,
        weight: f64,
    },

    #[error("factor construction for {element} is inconsistent with its expansion: {detail}")]
    FactorInconsistency { element: ElementId, detail: String },

    #[error("invalid factor: {0}")]
    InvalidFactor(String),

    #[error("variable {0} appears with different ranges")]
    RangeMismatch(ElementId),

    #[error("query variable {0} does not appear in any factor")]
    QueryNotInFactors(ElementId),

    #[error("inconsistent evidence: the upper pass assigns no weight to any query value")]
    InconsistentEvidence,

    #[error("belief propagation overflowed after {0} iterations; normalize messages or use the log domain")]
    BeliefOverflow(usize),

    #[error("oracle trace budget of {0} traces exceeded")]
    OracleBudgetExceeded(usize),

    #[error("exhaustive summation would exceed the size guard of {0}")]
    SizeGuard(u64),

    #[error("no usable samples ({rejected} rejected, {truncated} truncated of {samples})")]
    EstimateUnavailable {
        samples: usize,
        rejected: usize,
        truncated: usize,
    },

    #[error("invalid depth schedule: {0}")]
    InvalidSchedule(String),

    #[error("bounds on {value} loosened from depth {from} to depth {to} with unchanged evidence")]
    MonotonicityViolation { value: Value, from: i64, to: i64 },

    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Walks nested function failures down to the innermost cause.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::FunctionFailed { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
