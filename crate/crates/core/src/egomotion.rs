//! Ego-motion: the per-step vehicle motion model, the combined
//! translation/rotation loss, pluggable estimators, and bin-based
//! confidence calibration.
//!
//! A step is (a) a rotation about the rear-axle motion center followed by
//! (b) a forward translation along the new heading. Composing the steps
//! recovered from consecutive ride poses reproduces the ride exactly, and
//! the step is exactly invertible.

use crate::error::{Error, Result};
use crate::geo::{normalize_angle, wrap_signed, GeoPose};
use crate::rng::rng_for_indexed;
use crate::world::FrameRecord;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Supported inter-frame interval, seconds.
pub const DT_RANGE: (f64, f64) = (0.033, 1.0);

/// Bins per parameter in the confidence histograms.
pub const CALIBRATION_BINS: usize = 100;

/// Coverage target for the calibrated error range; 0.68 makes the range
/// directly usable as a one-sigma process noise.
pub const COVERAGE_TARGET: f64 = 0.68;

/// One kinematic step: rotation (radians, CCW positive) applied before a
/// forward translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionStep {
    pub rotation: f64,
    pub translation: f64,
    pub dt: f64,
}

impl MotionStep {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidFramePair(format!("dt {} <= 0", self.dt)));
        }
        if !self.rotation.is_finite() || self.rotation.abs() >= std::f64::consts::PI {
            return Err(Error::InvalidFramePair(format!(
                "rotation {} outside (-pi, pi)",
                self.rotation
            )));
        }
        if !self.translation.is_finite() {
            return Err(Error::NonFinite("translation"));
        }
        Ok(())
    }

    /// Speed over the step, m/s.
    pub fn speed(&self) -> f64 {
        self.translation / self.dt
    }
}

/// Apply a step: rotate first, then translate along the new heading.
pub fn propagate(pose: &GeoPose, step: &MotionStep) -> GeoPose {
    let heading = normalize_angle(pose.heading + step.rotation);
    GeoPose {
        x: pose.x + step.translation * heading.cos(),
        y: pose.y + step.translation * heading.sin(),
        heading,
    }
}

/// Exact inverse of [`propagate`]: undo the translation along the current
/// heading, then undo the rotation.
pub fn propagate_inverse(pose: &GeoPose, step: &MotionStep) -> GeoPose {
    GeoPose {
        x: pose.x - step.translation * pose.heading.cos(),
        y: pose.y - step.translation * pose.heading.sin(),
        heading: normalize_angle(pose.heading - step.rotation),
    }
}

/// Ground-truth step between consecutive poses: rotation is the heading
/// difference, translation the chord length. For poses produced by the
/// ride simulator, `propagate(a, step_between(a, b, dt))` reproduces `b`.
pub fn step_between(a: &GeoPose, b: &GeoPose, dt: f64) -> MotionStep {
    MotionStep {
        rotation: wrap_signed(b.heading - a.heading),
        translation: (b.x - a.x).hypot(b.y - a.y),
        dt,
    }
}

/// Combined loss on (translation, rotation) predictions:
/// 0.5 |t_hat - t| + 0.5 |r_hat - r|.
pub fn motion_loss(predicted: (f64, f64), truth: (f64, f64)) -> f64 {
    0.5 * (predicted.0 - truth.0).abs() + 0.5 * (predicted.1 - truth.1).abs()
}

/// A step estimate with calibrated error ranges (one-sigma equivalents).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub step: MotionStep,
    pub rot_error_range: f64,
    pub trans_error_range: f64,
}

/// A validated consecutive frame pair of one ride.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub first: &'a FrameRecord,
    pub second: &'a FrameRecord,
}

impl<'a> FramePair<'a> {
    /// Frames must come from one ride, be index-consecutive (frame ids are
    /// sequential within a ride), and have dt within [33 ms, 1 s].
    pub fn new(first: &'a FrameRecord, second: &'a FrameRecord) -> Result<Self> {
        if first.ride_id != second.ride_id {
            return Err(Error::InvalidFramePair(format!(
                "cross-ride pair {} vs {}",
                first.ride_id, second.ride_id
            )));
        }
        if second.frame_id != first.frame_id + 1 {
            return Err(Error::InvalidFramePair(format!(
                "non-consecutive frames {} -> {}",
                first.frame_id, second.frame_id
            )));
        }
        let dt = second.t - first.t;
        if !(DT_RANGE.0..=DT_RANGE.1).contains(&dt) {
            return Err(Error::InvalidFramePair(format!(
                "dt {dt} outside [{}, {}] s",
                DT_RANGE.0, DT_RANGE.1
            )));
        }
        Ok(Self { first, second })
    }

    pub fn dt(&self) -> f64 {
        self.second.t - self.first.t
    }

    /// Ground-truth step recovered from the pair's poses.
    pub fn truth_step(&self) -> MotionStep {
        step_between(&self.first.pose, &self.second.pose, self.dt())
    }
}

/// Motion estimators are pure per call; parallel use needs no locking.
pub trait MotionEstimator: Sync {
    fn estimate(&self, pair: &FramePair) -> Result<MotionEstimate>;
}

/// The default estimator: ground truth plus zero-mean Gaussian noise with
/// configured sigmas. Noise is a pure function of (seed, frame ids).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedEstimator {
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub seed: u64,
    /// Calibrated error ranges attached to every estimate; default to the
    /// configured sigmas until [`calibrate_confidence`] refines them.
    pub rot_error_range: f64,
    pub trans_error_range: f64,
}

impl SimulatedEstimator {
    pub fn new(sigma_rot: f64, sigma_trans: f64, seed: u64) -> Self {
        Self {
            sigma_rot,
            sigma_trans,
            seed,
            rot_error_range: sigma_rot,
            trans_error_range: sigma_trans,
        }
    }

    pub fn with_ranges(mut self, calibration: &ConfidenceCalibration) -> Self {
        self.rot_error_range = calibration.rotation.error_range;
        self.trans_error_range = calibration.translation.error_range;
        self
    }
}

impl MotionEstimator for SimulatedEstimator {
    fn estimate(&self, pair: &FramePair) -> Result<MotionEstimate> {
        let truth = pair.truth_step();
        let mut rng = rng_for_indexed(self.seed, "motion-noise", pair.second.frame_id);
        let normal = StandardNormal;
        let nr: f64 = normal.sample(&mut rng);
        let nt: f64 = normal.sample(&mut rng);
        Ok(MotionEstimate {
            step: MotionStep {
                rotation: truth.rotation + self.sigma_rot * nr,
                translation: truth.translation + self.sigma_trans * nt,
                dt: truth.dt,
            },
            rot_error_range: self.rot_error_range,
            trans_error_range: self.trans_error_range,
        })
    }
}

/// Tiny linear regressor on concatenated frame features, trained with the
/// combined loss. It exercises the loss end-to-end; the simulated
/// estimator remains the default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearMotionRegressor {
    /// One weight row per head (translation, rotation), plus bias.
    w_trans: Vec<f64>,
    w_rot: Vec<f64>,
    b_trans: f64,
    b_rot: f64,
    pub rot_error_range: f64,
    pub trans_error_range: f64,
}

impl LinearMotionRegressor {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            w_trans: vec![0.0; 2 * feature_dim],
            w_rot: vec![0.0; 2 * feature_dim],
            b_trans: 0.0,
            b_rot: 0.0,
            rot_error_range: 0.0,
            trans_error_range: 0.0,
        }
    }

    fn inputs(pair: &FramePair) -> Vec<f64> {
        let mut x = pair.first.raw_feature.clone();
        x.extend_from_slice(&pair.second.raw_feature);
        x
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let t = self.b_trans + self.w_trans.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let r = self.b_rot + self.w_rot.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        (t, r)
    }

    /// Subgradient descent on the combined loss over the given pairs.
    /// Returns the mean loss per epoch.
    pub fn fit(&mut self, pairs: &[FramePair], epochs: usize, lr: f64) -> Vec<f64> {
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            for pair in pairs {
                let x = Self::inputs(pair);
                let truth = pair.truth_step();
                let (t_hat, r_hat) = self.predict(&x);
                total += motion_loss((t_hat, r_hat), (truth.translation, truth.rotation));
                let gt = 0.5 * (t_hat - truth.translation).signum();
                let gr = 0.5 * (r_hat - truth.rotation).signum();
                for (w, v) in self.w_trans.iter_mut().zip(&x) {
                    *w -= lr * gt * v;
                }
                for (w, v) in self.w_rot.iter_mut().zip(&x) {
                    *w -= lr * gr * v;
                }
                self.b_trans -= lr * gt;
                self.b_rot -= lr * gr;
            }
            history.push(total / pairs.len().max(1) as f64);
        }
        history
    }
}

impl MotionEstimator for LinearMotionRegressor {
    fn estimate(&self, pair: &FramePair) -> Result<MotionEstimate> {
        let x = Self::inputs(pair);
        let (t, r) = self.predict(&x);
        Ok(MotionEstimate {
            step: MotionStep {
                rotation: wrap_signed(r),
                translation: t,
                dt: pair.dt(),
            },
            rot_error_range: self.rot_error_range,
            trans_error_range: self.trans_error_range,
        })
    }
}

/// Residual histogram for one motion parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCalibration {
    /// Bin edges (len = bins + 1), strictly increasing.
    pub edges: Vec<f64>,
    /// Bin probabilities, summing to 1.
    pub probs: Vec<f64>,
    pub mean: f64,
    /// Half-width of the smallest symmetric interval around the mean with
    /// cumulative probability >= the coverage target.
    pub error_range: f64,
}

impl ParamCalibration {
    fn from_residuals(residuals: &[f64], bins: usize, coverage: f64) -> Self {
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let min = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        if (max - min) < 1e-300 {
            // Degenerate: all residuals identical; a single populated bin.
            let width = 1e-9;
            return Self {
                edges: vec![min - width, min + width],
                probs: vec![1.0],
                mean,
                error_range: 0.0,
            };
        }

        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &r in residuals {
            let mut idx = ((r - min) / width) as usize;
            if idx >= bins {
                idx = bins - 1;
            }
            counts[idx] += 1;
        }
        let probs: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
        let edges: Vec<f64> = (0..=bins).map(|i| min + i as f64 * width).collect();

        let error_range = symmetric_interval_half_width(&edges, &probs, mean, coverage);
        Self {
            edges,
            probs,
            mean,
            error_range,
        }
    }

    /// Fraction of residuals falling inside the calibrated range.
    pub fn coverage_of(&self, residuals: &[f64]) -> f64 {
        if residuals.is_empty() {
            return 0.0;
        }
        let inside = residuals
            .iter()
            .filter(|r| (**r - self.mean).abs() <= self.error_range)
            .count();
        inside as f64 / residuals.len() as f64
    }
}

/// Smallest half-width w such that the histogram mass inside
/// [mean - w, mean + w] reaches `coverage`, pro-rating partial bins.
fn symmetric_interval_half_width(
    edges: &[f64],
    probs: &[f64],
    mean: f64,
    coverage: f64,
) -> f64 {
    let mass_within = |w: f64| -> f64 {
        let lo = mean - w;
        let hi = mean + w;
        let mut total = 0.0;
        for (i, p) in probs.iter().enumerate() {
            let (a, b) = (edges[i], edges[i + 1]);
            let overlap = (b.min(hi) - a.max(lo)).max(0.0);
            if overlap > 0.0 {
                total += p * overlap / (b - a);
            }
        }
        total
    };
    // Coverage grows piecewise-linearly in w; bisect to the target.
    let span = (edges[edges.len() - 1] - edges[0]).abs();
    let mut lo = 0.0;
    let mut hi = span + (mean - edges[0]).abs() + (edges[edges.len() - 1] - mean).abs();
    if mass_within(hi) < coverage {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass_within(mid) >= coverage {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Per-parameter histograms and error ranges for an estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceCalibration {
    pub rotation: ParamCalibration,
    pub translation: ParamCalibration,
    pub coverage_target: f64,
    pub n_steps: usize,
}

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    version: u32,
    calibration: ConfidenceCalibration,
}

impl ConfidenceCalibration {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &CalibrationFile {
                version: CALIBRATION_FORMAT_VERSION,
                calibration: self.clone(),
            },
        )?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CalibrationFile =
            serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        if file.version != CALIBRATION_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "calibration file",
                got: file.version,
                supported: CALIBRATION_FORMAT_VERSION,
            });
        }
        Ok(file.calibration)
    }
}

/// Residuals (estimate - truth) of an estimator over validation rides.
pub fn estimator_residuals(
    estimator: &dyn MotionEstimator,
    rides: &[Vec<FrameRecord>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for ride in rides {
        for pair in ride.windows(2) {
            let pair = FramePair::new(&pair[0], &pair[1])?;
            let est = estimator.estimate(&pair)?;
            let truth = pair.truth_step();
            rot.push(est.step.rotation - truth.rotation);
            trans.push(est.step.translation - truth.translation);
        }
    }
    Ok((rot, trans))
}

/// Build 100-bin residual histograms per parameter and derive the 0.68
/// error ranges. Needs at least 1000 validation steps.
pub fn calibrate_confidence(
    estimator: &dyn MotionEstimator,
    rides: &[Vec<FrameRecord>],
) -> Result<ConfidenceCalibration> {
    let (rot, trans) = estimator_residuals(estimator, rides)?;
    if rot.len() < 1000 {
        return Err(Error::NotEnoughSteps {
            have: rot.len(),
            need: 1000,
        });
    }
    Ok(ConfidenceCalibration {
        rotation: ParamCalibration::from_residuals(&rot, CALIBRATION_BINS, COVERAGE_TARGET),
        translation: ParamCalibration::from_residuals(&trans, CALIBRATION_BINS, COVERAGE_TARGET),
        coverage_target: COVERAGE_TARGET,
        n_steps: rot.len(),
    })
}

/// Motion stream rows as CSV.
pub fn write_motions_csv(
    rows: &[(u64, u64, MotionEstimate)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "first_frame_id,second_frame_id,dt,rotation,translation,rot_error_range,trans_error_range"
    )?;
    for (a, b, m) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            a, b, m.step.dt, m.step.rotation, m.step.translation, m.rot_error_range, m.trans_error_range
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn frame(id: u64, ride: u64, t: f64, pose: GeoPose) -> FrameRecord {
        FrameRecord {
            frame_id: id,
            ride_id: ride,
            t,
            pose,
            raw_feature: vec![0.0; 4],
            nuisance_seed: 0,
        }
    }

    #[test]
    fn straight_step() {
        let pose = GeoPose::new(2.0, 3.0, 0.0);
        let next = propagate(
            &pose,
            &MotionStep {
                rotation: 0.0,
                translation: 5.0,
                dt: 0.1,
            },
        );
        assert_eq!(next, GeoPose::new(7.0, 3.0, 0.0));
    }

    #[test]
    fn quarter_turn_step() {
        let pose = GeoPose::new(1.0, 1.0, 0.0);
        let next = propagate(
            &pose,
            &MotionStep {
                rotation: FRAC_PI_2,
                translation: 1.0,
                dt: 0.1,
            },
        );
        assert_relative_eq!(next.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(next.y, 2.0, epsilon = 1e-12);
        assert_relative_eq!(next.heading, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn circle_closure() {
        // 360 one-degree steps with the matching arc chord return to the
        // start; the discrete model closes by symmetry.
        let radius = 50.0;
        let step = MotionStep {
            rotation: 1.0_f64.to_radians(),
            translation: TAU * radius / 360.0,
            dt: 0.1,
        };
        let start = GeoPose::new(10.0, -4.0, 0.3);
        let mut pose = start;
        for _ in 0..360 {
            pose = propagate(&pose, &step);
        }
        let err = pose.distance_to(&start);
        assert!(err < 1e-6 * radius, "closure error {err}");
        assert_relative_eq!(pose.heading, start.heading, epsilon = 1e-9);
    }

    #[test]
    fn propagate_is_exactly_invertible() {
        let mut rng = crate::rng::rng_for(3, "inv");
        for _ in 0..1000 {
            let pose = GeoPose::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(0.0..TAU),
            );
            let step = MotionStep {
                rotation: rng.random_range(-1.0..1.0),
                translation: rng.random_range(0.0..2.0),
                dt: 0.1,
            };
            let back = propagate_inverse(&propagate(&pose, &step), &step);
            assert!(back.distance_to(&pose) < 1e-12);
            assert!(crate::geo::heading_diff(back.heading, pose.heading) < 1e-12);
        }
    }

    #[test]
    fn motion_loss_closed_forms() {
        assert_eq!(motion_loss((1.0, 0.5), (1.0, 0.5)), 0.0);
        assert_eq!(motion_loss((3.0, 0.5), (1.0, 0.5)), 1.0);
        assert_eq!(motion_loss((2.0, 1.0), (1.0, 0.5)), 0.75);
        // Symmetry.
        let a = (1.3, -0.2);
        let b = (0.4, 0.9);
        assert_eq!(motion_loss(a, b), motion_loss(b, a));
    }

    #[test]
    fn frame_pair_validation() {
        let a = frame(10, 1, 0.0, GeoPose::new(0.0, 0.0, 0.0));
        let b = frame(11, 1, 0.1, GeoPose::new(1.0, 0.0, 0.0));
        assert!(FramePair::new(&a, &b).is_ok());

        let cross = frame(11, 2, 0.1, GeoPose::new(1.0, 0.0, 0.0));
        assert!(FramePair::new(&a, &cross).is_err());

        let skip = frame(12, 1, 0.2, GeoPose::new(1.0, 0.0, 0.0));
        assert!(FramePair::new(&a, &skip).is_err());

        let too_fast = frame(11, 1, 0.01, GeoPose::new(1.0, 0.0, 0.0));
        assert!(FramePair::new(&a, &too_fast).is_err());
        let too_slow = frame(11, 1, 1.5, GeoPose::new(1.0, 0.0, 0.0));
        assert!(FramePair::new(&a, &too_slow).is_err());
    }

    #[test]
    fn zero_noise_estimator_returns_truth() {
        let a = frame(0, 1, 0.0, GeoPose::new(0.0, 0.0, 0.0));
        let b = frame(1, 1, 0.1, GeoPose::new(0.9, 0.05, 0.1));
        let pair = FramePair::new(&a, &b).unwrap();
        let est = SimulatedEstimator::new(0.0, 0.0, 7);
        let m = est.estimate(&pair).unwrap();
        let truth = pair.truth_step();
        assert_eq!(m.step.rotation, truth.rotation);
        assert_eq!(m.step.translation, truth.translation);
    }

    #[test]
    fn estimator_noise_has_configured_scale() {
        let est = SimulatedEstimator::new(0.0, 0.1, 99);
        let mut sq = 0.0;
        let n = 10_000;
        for k in 0..n {
            let a = frame(2 * k, 1, 0.0, GeoPose::new(0.0, 0.0, 0.0));
            let b = frame(2 * k + 1, 1, 0.1, GeoPose::new(1.0, 0.0, 0.0));
            let pair = FramePair::new(&a, &b).unwrap();
            let m = est.estimate(&pair).unwrap();
            let r = m.step.translation - 1.0;
            sq += r * r;
        }
        let rmse = (sq / n as f64).sqrt();
        assert!((rmse - 0.1).abs() / 0.1 < 0.05, "rmse {rmse}");
    }

    fn synthetic_rides(n_rides: usize, steps: usize) -> Vec<Vec<FrameRecord>> {
        let mut rides = Vec::new();
        for ride in 0..n_rides {
            let mut pose = GeoPose::new(0.0, ride as f64, 0.0);
            let mut frames = vec![frame(ride as u64 * 1_000_000, ride as u64, 0.0, pose)];
            for k in 1..=steps {
                pose = propagate(
                    &pose,
                    &MotionStep {
                        rotation: 0.01,
                        translation: 1.0,
                        dt: 0.1,
                    },
                );
                frames.push(frame(
                    ride as u64 * 1_000_000 + k as u64,
                    ride as u64,
                    k as f64 * 0.1,
                    pose,
                ));
            }
            rides.push(frames);
        }
        rides
    }

    #[test]
    fn zero_noise_calibration_gives_zero_ranges() {
        let rides = synthetic_rides(4, 300);
        let est = SimulatedEstimator::new(0.0, 0.0, 1);
        let calib = calibrate_confidence(&est, &rides).unwrap();
        assert!(calib.rotation.error_range.abs() < 1e-12);
        assert!(calib.translation.error_range.abs() < 1e-12);
        assert_relative_eq!(
            calib.rotation.probs.iter().sum::<f64>(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_residuals_give_one_sigma_range() {
        let rides = synthetic_rides(10, 2000);
        let est = SimulatedEstimator::new(0.0, 0.1, 3);
        let calib = calibrate_confidence(&est, &rides).unwrap();
        // 0.68 of a Gaussian is ~0.9946 sigma.
        assert!(
            (calib.translation.error_range - 0.1).abs() / 0.1 < 0.1,
            "range {}",
            calib.translation.error_range
        );
        assert_relative_eq!(
            calib.translation.probs.iter().sum::<f64>(),
            1.0,
            epsilon = 1e-12
        );
        // Held-out coverage lands near the target.
        let more = synthetic_rides(5, 1500);
        let (_, trans) = estimator_residuals(&est, &more).unwrap();
        let cov = calib.translation.coverage_of(&trans);
        assert!((0.63..=0.73).contains(&cov), "coverage {cov}");
    }

    #[test]
    fn calibration_requires_enough_steps() {
        let rides = synthetic_rides(2, 100);
        let est = SimulatedEstimator::new(0.0, 0.1, 3);
        assert!(matches!(
            calibrate_confidence(&est, &rides),
            Err(Error::NotEnoughSteps { .. })
        ));
    }

    #[test]
    fn regressor_reduces_loss_on_biased_data() {
        // Constant-motion rides: the regressor should at least learn the
        // bias terms and cut the loss well below the zero-init loss.
        let rides = synthetic_rides(3, 200);
        let mut pairs = Vec::new();
        for ride in &rides {
            for w in ride.windows(2) {
                pairs.push(FramePair::new(&w[0], &w[1]).unwrap());
            }
        }
        let mut reg = LinearMotionRegressor::new(4);
        let history = reg.fit(&pairs, 40, 0.01);
        let first = history.first().unwrap();
        let last = history.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert!(*last < 0.1 * first, "loss {last} vs initial {first}");
    }

    #[test]
    fn calibration_file_round_trip() {
        let rides = synthetic_rides(4, 400);
        let est = SimulatedEstimator::new(0.002, 0.05, 5);
        let calib = calibrate_confidence(&est, &rides).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibration.json");
        calib.save(&path).unwrap();
        let loaded = ConfidenceCalibration::load(&path).unwrap();
        assert_eq!(loaded.n_steps, calib.n_steps);
        assert_eq!(loaded.translation.error_range, calib.translation.error_range);
    }

    #[test]
    fn step_validation() {
        assert!(MotionStep {
            rotation: 0.1,
            translation: 1.0,
            dt: 0.1
        }
        .validate()
        .is_ok());
        assert!(MotionStep {
            rotation: PI,
            translation: 1.0,
            dt: 0.1
        }
        .validate()
        .is_err());
        assert!(MotionStep {
            rotation: 0.0,
            translation: 1.0,
            dt: 0.0
        }
        .validate()
        .is_err());
    }
}
