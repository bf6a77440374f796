//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidWorld(String),

    #[error("world has no drivable roads")]
    NoRoads,

    #[error("pose ({x:.1}, {y:.1}) is outside every signed cell")]
    OffRoad { x: f64, y: f64 },

    #[error("invalid ride params: {0}")]
    InvalidRide(String),

    #[error("latitude {0:.2} outside supported range (|lat| <= 85 deg)")]
    LatitudeOutOfRange(f64),

    #[error("dimension mismatch: got {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("training aborted at step {step}: non-finite loss {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("not enough calibration pairs: have {have}, need {need}")]
    NotEnoughPairs { have: usize, need: usize },

    #[error("not enough validation steps: have {have}, need {need}")]
    NotEnoughSteps { have: usize, need: usize },

    #[error("invalid frame pair: {0}")]
    InvalidFramePair(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("input stream out of order at t={0}")]
    OutOfOrder(f64),

    #[error("unsupported format version {got} in {what} (supported: {supported})")]
    FormatVersion {
        what: &'static str,
        got: u32,
        supported: u32,
    },

    #[error("malformed {what}: {msg}")]
    Malformed { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
