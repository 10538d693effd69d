use thiserror::Error;

/// Errors produced across the detection, tracking and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },

    #[error("elevation {phi} deg is at or above the horizon")]
    AboveHorizon { phi: f64 },

    #[error("point lies on the camera axis, direction undefined")]
    Singular,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(&'static str),

    #[error("no target candidate available")]
    NoTarget,

    #[error("filter diverged: covariance is not positive definite")]
    FilterDivergence,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("input error: {0}")]
    Input(String),

    #[error("detector failed on viewport {viewport}: {message}")]
    Detector { viewport: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
