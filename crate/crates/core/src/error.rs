use thiserror::Error;

/// Errors raised by kernel evaluation, measure handling, flows and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Kernel evaluated on the diagonal where it is unbounded.
    #[error("kernel is singular on the diagonal (x = y)")]
    DiagonalSingularity,

    /// Point or measure dimension does not match the kernel / domain.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DomainMismatch { expected: usize, got: usize },

    /// The two measures live on different domains.
    #[error("measures live on different domains: {0} vs {1}")]
    DomainKindMismatch(String, String),

    /// Riesz exponent outside the admissible range.
    #[error("riesz exponent s = {s} outside admissible range [-1, {max}] \\ {{0}} for d = {d}")]
    InvalidExponent { s: f64, d: usize, max: f64 },

    /// Kernel family is not available on the requested domain.
    #[error("kernel {0} is not supported on this domain")]
    UnsupportedKernel(String),

    #[error("fourier truncation must be >= 1, got {0}")]
    TruncationTooSmall(usize),

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("grids have different lattices")]
    LatticeMismatch,

    #[error("signed measure does not have zero mean (mean = {0:e})")]
    NonzeroMean(f64),

    #[error("density vanishes in at least one cell (min = {0:e})")]
    ZeroDensityCell(f64),

    #[error("degenerate log-log fit: {0}")]
    DegenerateFit(String),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("support radius is undefined on the torus")]
    TorusUnsupported,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("particles collided (min pairwise distance {0:e})")]
    CollisionDetected(f64),

    #[error("non-finite state at t = {0}")]
    BlowupDetected(f64),

    #[error("step violates the CFL guard: dt * sup|dv| = {0:.3} > 0.5")]
    CflViolated(f64),

    #[error("mass renormalization factor {0} outside 1 +- 1e-4")]
    MassDriftExceeded(f64),

    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("cost matrix too large: {0} entries")]
    SizeExceeded(usize),

    #[error("solver did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("no decreasing step found")]
    LineSearchFailure,

    #[error("no descent set: t0 underflowed (supports overlap at this resolution)")]
    NoDescentSet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical abort, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation { .. } => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
