use thiserror::Error;
use trajmatch_core::baseline::HmmError;
use trajmatch_core::metrics::MetricError;
use trajmatch_core::trajgen::GenError;
use trajmatch_core::NetworkError;
use trajmatch_model::ModelError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("predictions and truth disagree on trajectory ids; missing from predictions: {missing_predictions:?}; missing from truth: {missing_truth:?}")]
    Join {
        missing_predictions: Vec<String>,
        missing_truth: Vec<String>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate trajectory id {0}")]
    DuplicateId(String),
    #[error("trajectory {0} has no truth labels")]
    MissingTruth(String),
    #[error("hash mismatch for {path}: expected {expected}, found {found}")]
    Hash {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl HarnessError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => exit::USAGE,
            Self::Internal(_) => exit::INTERNAL,
            Self::Model(ModelError::InvalidConfig(_) | ModelError::EmptyMask) => exit::USAGE,
            Self::Generation(GenError::InvalidConfig(_)) | Self::Hmm(HmmError::InvalidConfig(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}
