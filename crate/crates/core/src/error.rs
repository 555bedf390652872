use thiserror::Error;

use crate::domain::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fold count {folds} for {trajectories} trajectories")]
    InvalidFoldCount { folds: usize, trajectories: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("dataset failed validation: {0}")]
    Validation(ValidationReport),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid discount factor {0}; need 0 <= gamma < 1")]
    InvalidDiscount(f64),

    #[error("behavior chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("propensity must be positive, got {0}")]
    ZeroPropensity(f64),

    #[error("cross-fitting violation: nuisance for fold {fold} was trained on trajectory {trajectory} from that fold")]
    CrossFitting { fold: usize, trajectory: u64 },

    #[error("batch too small: need at least {needed}, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("pseudo table has no entries for action {0}")]
    MissingAction(usize),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
