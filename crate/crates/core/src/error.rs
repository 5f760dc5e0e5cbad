use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the library.
///
/// The CLI maps each variant onto an exit code through [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("curve values are all zero")]
    AllZero,
    #[error("negative value {value} at position {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ragged data: line {line} has {found} columns, expected {expected}")]
    Shape {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid value on line {line}: {msg}")]
    Value { line: usize, msg: String },
    #[error("interpolation needs at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty curve set")]
    EmptySet,
    #[error("bad constraint window: {0}")]
    BadWindow(String),
    #[error("bad knot vector: {0}")]
    BadKnots(String),
    #[error("Gram matrix is singular or not positive definite")]
    SingularGram,
    #[error("synthesized curve has non-positive mean")]
    NonPositiveMean,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("covariance matrix is ill-conditioned even with jitter {0:e}")]
    IllConditioned(f64),
    #[error("duplicate training inputs at rows {0} and {1} with zero noise")]
    DuplicateInputs(usize, usize),
    #[error("no feasible candidate found, domain looks corrupted")]
    NoFeasibleCandidate,
    #[error("requested {count} design points from {available} available")]
    CountExceedsData { count: usize, available: usize },
    #[error("objective evaluation failed at evaluation {iteration}: {msg}")]
    Objective { iteration: usize, msg: String },
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Objective,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | UnknownStrategy { .. } | BadWindow(_) | BadKnots(_) | BadGrid(_) => {
                ErrorKind::Config
            }
            AllZero | NegativeValue { .. } | Parse { .. } | Shape { .. } | Value { .. }
            | TooFewKnots(_) | DimensionMismatch { .. } | EmptySet | CountExceedsData { .. }
            | Io(_) | Json(_) => ErrorKind::Data,
            SingularGram | NonPositiveMean | DegenerateData(_) | IllConditioned(_)
            | DuplicateInputs(..) | NoFeasibleCandidate => ErrorKind::Numeric,
            Objective { .. } => ErrorKind::Objective,
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
