use std::fmt;
use std::path::PathBuf;

/// A malformed input row, located by its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{} malformed row(s); first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    Rows(Vec<RowError>),

    #[error("matrix is empty after filtering")]
    EmptyMatrix,

    #[error("no entry reaches the advantage threshold {threshold}")]
    EmptyAdvantage { threshold: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate spectrum: leading eigenvalues {eigenvalues:?}")]
    DegenerateSpectrum { eigenvalues: Vec<f64> },

    #[error("unknown {kind} `{key}`")]
    Lookup { kind: &'static str, key: String },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("stratum `{0}` has no edits")]
    EmptyStratum(&'static str),

    #[error("regressor is constant")]
    DegenerateRegressor,

    #[error("only {matched} matched rows (need at least 3); unmatched: {unmatched:?}")]
    InsufficientOverlap { matched: usize, unmatched: Vec<String> },

    #[error("period {0} is not served by the endpoint")]
    UnsupportedPeriod(String),

    #[error("network: {message}")]
    Network {
        message: String,
        cursor: Option<Box<crate::ingest::HarvestCursor>>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Network,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Network { .. } | Error::UnsupportedPeriod(_) => ErrorClass::Network,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
