use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("constant feature {name:?} (index {index}): std is zero")]
    ConstantFeature { index: usize, name: String },

    #[error("feature {name:?} (index {index}) has no observed entries")]
    EmptyColumn { index: usize, name: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("placeholder invariant violated: {0}")]
    Placeholder(String),

    #[error("invalid mask distribution: {0}")]
    MaskDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observed mask is nonzero but no observed-missingness mode was given")]
    MissingObservedMode,

    #[error("unreachable evidence: conditioning event has probability zero")]
    UnreachableEvidence,

    #[error("invalid joint distribution: {0}")]
    InvalidJoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("covariance block for observed set {0:?} is singular")]
    SingularCovariance(Vec<usize>),

    #[error("imputer: {0}")]
    Imputer(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
