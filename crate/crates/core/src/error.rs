use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("degenerate weights: a single frame carries all the weight")]
    DegenerateWeights,

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("degenerate state: update denominator is {0}")]
    DegenerateState(f64),

    #[error("not positive definite")]
    NotPositiveDefinite,

    #[error("irreparably singular: factorization failed after regularization up to epsilon {0:e}")]
    IrreparablySingular(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("affinity undefined: training data must span at least 2 classes")]
    AffinityUndefined,

    #[error("degenerate skeleton: shoulder-center to spine distance {0:e} is below threshold")]
    DegenerateSkeleton(f64),

    #[error("frame has missing or non-finite joints")]
    MissingJoints,

    #[error("inseparable synthesis: no class generators met the separation floor {floor} after {attempts} attempts")]
    InseparableSynthesis { floor: f64, attempts: usize },

    #[error("no streams")]
    NoStreams,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical layers (factorizations, update
    /// recurrences) rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFault(_)
                | Error::DegenerateState(_)
                | Error::DegenerateWeights
                | Error::NotPositiveDefinite
                | Error::IrreparablySingular(_)
        )
    }

    /// Process exit code: 1 for bad flag values, 2 for data errors, 3 for
    /// numerical faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            e if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
