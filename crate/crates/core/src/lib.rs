//! Coarse-to-fine vehicle localization on a synthetic driving world.
//!
//! The pipeline has three stages: a compact 30-dimensional place descriptor
//! trained from geo-tagged frame triplets, geo-restricted descriptor retrieval
//! that turns a noisy GPS fix into a coarse position with a confidence
//! covariance, and an extended Kalman filter that fuses those coarse fixes
//! with per-frame ego-motion into a high-rate location stream.
//!
//! Everything runs on a deterministic synthetic world ([`world`]): grid roads
//! carved into 10 m cells, per-(cell, heading-sector) scene signatures standing
//! in for camera imagery, simulated rides with Ackermann-style kinematics, and
//! a heavy-tailed GPS noise model with urban-canyon bias episodes.
//!
//! Module map:
//! - [`world`] — world generation, ride simulation, frame features, GPS noise
//! - [`embed`] — descriptor model, softmax-triplet loss, gradients, trainer
//! - [`samplers`] — the three triplet generators over a frame database
//! - [`retrieval`] — keyframe index, threshold calibration, coarse localization
//! - [`egomotion`] — motion model, combined loss, estimators, confidence bins
//! - [`fusion`] — EKF over ego-motion controls and coarse-fix measurements
//! - [`metrics`] — localization accuracy reports and error CDFs
//! - [`eval`] — benchmark experiments tying the stages together

pub mod egomotion;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geo;
pub mod grid;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod samplers;
pub mod world;

pub use error::{Error, Result};
pub use geo::GeoPose;
