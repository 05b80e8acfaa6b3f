use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("stability index {0} outside the open interval (1, 2)")]
    InvalidStabilityIndex(f64),
    #[error("malformed spectral measure: {0}")]
    MalformedMeasure(String),
    #[error("spectral measure is not symmetric: {0}")]
    AsymmetricMeasure(String),
    #[error("degenerate spectral measure: lower bound c1 = {c1:e} on the sphere integral")]
    DegenerateSpectralMeasure { c1: f64 },
    #[error("unsupported dimension {0} for this operation")]
    UnsupportedDimension(usize),
    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    SingularMatrix(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid coefficient specification: {0}")]
    InvalidCoefficients(String),
    #[error("sigma is singular or nearly so: min |det sigma| = {0:e}")]
    SingularSigma(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numeric overflow at t = {time}: |state| = {magnitude:e}")]
    NumericOverflow { time: f64, magnitude: f64 },
    #[error("path horizon {have} is shorter than required {need}")]
    HorizonTooShort { have: f64, need: f64 },
    #[error("{failed} of {total} ensemble paths failed")]
    EnsembleFailure { failed: usize, total: usize },
    #[error("occupation sample is not stationary: TV between halves = {0}")]
    NonStationary(f64),
    #[error("transition estimate is reducible: cell {0} was never entered")]
    ReducibleChainEstimate(usize),
    #[error("not enough decay signal to fit a mixing rate: {0}")]
    InsufficientDecaySignal(String),
    #[error("radial quadrature under-resolved: {0}")]
    QuadratureUnderResolved(String),
    #[error("right-hand side is not centered: Pi_h(f) = {0:e}")]
    NotCentered(f64),
    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("no frequencies with |CF| in the fitting window")]
    WindowEmpty,
    #[error("I/O error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
