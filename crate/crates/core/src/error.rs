use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected sample: {0}")]
    RejectedSample(String),

    #[error("invalid filter coefficient {0}: must lie strictly between 0 and 1")]
    InvalidAlpha(f64),

    #[error("cannot aggregate an empty contact set")]
    EmptyContactSet,

    #[error("unknown grasp type `{0}`")]
    UnknownGraspType(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid hand model: {0}")]
    InvalidHand(String),

    #[error("joint configuration has {got} angles, hand model has {expected} joints")]
    JointCount { expected: usize, got: usize },

    #[error("joint `{joint}` angle {angle} outside limits [{lo}, {hi}]")]
    JointLimit {
        joint: String,
        angle: f64,
        lo: f64,
        hi: f64,
    },

    #[error("hand model has no finger tagged {0}")]
    MissingTag(&'static str),

    #[error("got {got} fingertip samples, hand model has {expected} fingertips")]
    SensorCount { expected: usize, got: usize },

    #[error("invalid decoder: {0}")]
    InvalidDecoder(String),

    #[error("decoder has no posture for grasp type `{0}`")]
    UnsupportedGraspType(String),

    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
