use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid planner config: {0}")]
    InvalidConfig(String),

    #[error("no placeable object remains")]
    NothingPlaceable,

    #[error("backtrack depth {depth} exceeds history of {available} placements")]
    BacktrackTooDeep { depth: usize, available: usize },

    #[error("planner failed: {0}")]
    PlannerFailure(String),

    #[error("scene hash mismatch: plan was made for {expected}, got {actual}")]
    SceneHashMismatch { expected: String, actual: String },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}
