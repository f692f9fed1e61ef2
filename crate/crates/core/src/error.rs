use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quaternion has zero norm")]
    DegenerateQuaternion,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("non-finite gradient encountered in optimizer step")]
    NonFiniteGradient,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error(
        "UDF training did not reach its accuracy target: \
         mae {mae:.5}, near-surface mae {near_surface_mae:.5}"
    )]
    UdfTrainingFailed { mae: f64, near_surface_mae: f64 },

    #[error("distance field is not frozen")]
    FieldNotFrozen,

    #[error("resource limit: requested {requested} bytes, cap is {cap} bytes")]
    ResourceLimit { requested: u64, cap: u64 },

    #[error("insufficient overlap: only {found} correspondences survived rejection")]
    InsufficientOverlap { found: usize },

    #[error("covariance is rank deficient")]
    DegenerateCovariance,

    #[error("not a proper rotation: {0}")]
    InvalidRotation(String),

    #[error("empty input")]
    EmptyInput,

    #[error("parse error in {what} at line {line}: {message}")]
    Parse {
        what: String,
        line: usize,
        message: String,
    },

    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(what: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            message: message.into(),
        }
    }
}
