use thiserror::Error;

/// Errors raised across the library. Variants carry the offending index and
/// value where one exists so callers can report them without re-deriving.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, expected 1")]
    ColumnSumViolation { col: usize, sum: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    NotAProbabilityVector { sum: f64 },
    #[error("time {0} is not part of the process family")]
    TimeNotInFamily(f64),
    #[error("invalid time set: {0}")]
    InvalidTimeSet(String),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not unitary (max deviation of U U^dagger from I is {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("state vector not normalized (norm^2 = {norm_sq})")]
    NotNormalized { norm_sq: f64 },
    #[error("density operator invalid: {0}")]
    InvalidDensity(String),
    #[error("eigendecomposition failed (residual {residual:e})")]
    EigenDecompositionFailure { residual: f64 },
    #[error("finite-difference step {0:e} is below 1e-12")]
    StepTooSmall(f64),
    #[error("propagator family evaluation failed at t = {t}: {reason}")]
    EvaluationFailure { t: f64, reason: String },
    #[error("matrix is not doubly stochastic (row {row} sums to {sum})")]
    NotDoublyStochastic { row: usize, sum: f64 },
    #[error("dimension {0} unsupported")]
    DimUnsupported(usize),
    #[error("invalid dilation problem: {0}")]
    InvalidProblem(String),
    #[error("evaluation time {t} precedes the interaction end time {t0}")]
    TimeBeforeInteraction { t: f64, t0: f64 },
    #[error("joint dimension {0} exceeds the dense cap 2^14")]
    JointTooLarge(usize),
    #[error("observed outcome has zero probability")]
    ZeroProbabilityOutcome,
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("invalid ensemble spec: {0}")]
    InvalidSpec(String),
    #[error("distribution must be truncated (bounded) for this analysis")]
    UnboundedDistribution,
    #[error("reference integrator unstable: relative energy drift {drift:e} exceeds 1%")]
    StepUnstable { drift: f64 },
    #[error("Fock basis has {0} states, more than the 4096 cap")]
    BasisTooLarge(usize),
    #[error("Dyson order {0} unsupported (max 4)")]
    OrderUnsupported(usize),
    #[error("quadrature interval [{t0}, {t}] is degenerate")]
    QuadratureUnderflow { t0: f64, t: f64 },
    #[error("serialization: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
