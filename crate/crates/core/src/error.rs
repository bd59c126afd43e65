use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the modeling, sampling and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("coordinate {index} out of bounds: {value} not in [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate point: within 1e-10 of sample {0}")]
    DuplicatePoint(usize),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("fold count {k} out of range for {n} samples")]
    FoldsOutOfRange { k: usize, n: usize },
    #[error("correlation matrix not positive definite after nugget escalation")]
    NotPositiveDefinite,
    #[error("degenerate process variance")]
    DegenerateVariance,
    #[error("too few samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("every likelihood start failed")]
    AllStartsFailed,
    #[error("kernel derivatives require gamma = 2")]
    GammaNotTwo,
    #[error("no gradient samples available")]
    NoGradients,
    #[error("augmented system has {rows} rows, above the cap of {cap}")]
    SystemTooLarge { rows: usize, cap: usize },
    #[error("history holds no successful evaluation")]
    EmptyHistory,
    #[error("every acquisition candidate duplicates an existing sample")]
    AllCandidatesDuplicate,
    #[error("budget {budget} is smaller than the initial design size {n_doe}")]
    BudgetExhaustedBeforeDoE { budget: usize, n_doe: usize },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("config{}: {reason}", config_line(*.line))]
    Config { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn config_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" line {line}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
