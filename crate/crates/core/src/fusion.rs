//! Extended Kalman filter fusing ego-motion steps (control input) with
//! coarse position fixes (measurements).
//!
//! The state is (x, y, heading): the coarse fixes observe position only,
//! but the motion control is undefined without heading, so the state
//! carries it. Covariance updates use the Joseph form and the covariance is
//! re-symmetrized and eigenvalue-clamped after every step, so it stays
//! symmetric PSD through arbitrarily long runs.

use crate::egomotion::{propagate, MotionEstimate};
use crate::error::{Error, Result};
use crate::geo::{normalize_angle, GeoPose};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Filter state: mean (x, y, heading) and 3x3 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl FilterState {
    pub fn new(pose: &GeoPose, cov: Matrix3<f64>) -> Self {
        let mut state = Self {
            mean: Vector3::new(pose.x, pose.y, pose.heading),
            cov,
        };
        state.normalize();
        state
    }

    /// Diagonal initial state: position variance per axis plus heading
    /// variance.
    pub fn diagonal(pose: &GeoPose, pos_var: f64, heading_var: f64) -> Self {
        Self::new(
            pose,
            Matrix3::from_diagonal(&Vector3::new(pos_var, pos_var, heading_var)),
        )
    }

    pub fn pose(&self) -> GeoPose {
        GeoPose::new(self.mean.x, self.mean.y, self.mean.z)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.mean.x, self.mean.y)
    }

    /// Position block of the covariance.
    pub fn position_cov(&self) -> Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Wrap the heading and restore symmetric PSD (eigenvalues below zero
    /// are clamped; they only dip there by rounding).
    fn normalize(&mut self) {
        self.mean.z = normalize_angle(self.mean.z);
        self.cov = clamp_psd(&self.cov);
    }
}

/// Symmetrize and clamp negative eigenvalues to zero.
fn clamp_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|l| *l >= 0.0) {
        return sym;
    }
    let clamped = Vector3::new(
        eig.eigenvalues[0].max(0.0),
        eig.eigenvalues[1].max(0.0),
        eig.eigenvalues[2].max(0.0),
    );
    let q = eig.eigenvectors;
    q * Matrix3::from_diagonal(&clamped) * q.transpose()
}

/// Propagate the state by one motion estimate. The mean follows the
/// rotate-then-translate step; the covariance follows the motion Jacobian
/// plus diagonal process noise diag(trans_range^2, trans_range^2,
/// rot_range^2) built from the calibrated error ranges.
pub fn predict(state: &FilterState, motion: &MotionEstimate) -> FilterState {
    let step = &motion.step;
    let pose = state.pose();
    let next = propagate(&pose, step);
    let heading_new = next.heading;

    let (s, c) = heading_new.sin_cos();
    let t = step.translation;
    #[rustfmt::skip]
    let jac = Matrix3::new(
        1.0, 0.0, -t * s,
        0.0, 1.0,  t * c,
        0.0, 0.0,  1.0,
    );
    let q = Matrix3::from_diagonal(&Vector3::new(
        motion.trans_error_range * motion.trans_error_range,
        motion.trans_error_range * motion.trans_error_range,
        motion.rot_error_range * motion.rot_error_range,
    ));
    let mut out = FilterState {
        mean: Vector3::new(next.x, next.y, heading_new),
        cov: jac * state.cov * jac.transpose() + q,
    };
    out.normalize();
    out
}

/// What happened to a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Innovation covariance was singular; applied after inflating R by 10x.
    AppliedInflated,
    /// Still singular after inflation; the fix was skipped.
    Skipped,
}

/// Measurement update with a position fix (observes x, y only).
/// Joseph-form covariance keeps the result PSD; a numerically singular
/// innovation covariance inflates R by 10x and retries once, then skips.
pub fn update(
    state: &FilterState,
    z: &Vector2<f64>,
    r: &Matrix2<f64>,
) -> (FilterState, UpdateOutcome) {
    match try_update(state, z, r) {
        Some(next) => (next, UpdateOutcome::Applied),
        None => {
            let inflated = r * 10.0;
            match try_update(state, z, &inflated) {
                Some(next) => (next, UpdateOutcome::AppliedInflated),
                None => {
                    log::warn!("skipping fix: innovation covariance singular even after inflation");
                    (state.clone(), UpdateOutcome::Skipped)
                }
            }
        }
    }
}

fn try_update(state: &FilterState, z: &Vector2<f64>, r: &Matrix2<f64>) -> Option<FilterState> {
    let h = nalgebra::Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let p = state.cov;
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse()?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return None;
    }
    let k = p * h.transpose() * s_inv;
    let innovation = z - h * state.mean;
    let mean = state.mean + k * innovation;
    let i_kh = Matrix3::identity() - k * h;
    let cov = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    let mut out = FilterState { mean, cov };
    out.normalize();
    Some(out)
}

/// A timestamped motion control.
#[derive(Debug, Clone)]
pub struct MotionEvent {
    pub t: f64,
    pub motion: MotionEstimate,
}

/// A timestamped position measurement.
#[derive(Debug, Clone)]
pub struct FixEvent {
    pub t: f64,
    pub position: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Where a fused output came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusedSource {
    Predicted,
    Updated,
}

impl FusedSource {
    pub fn label(&self) -> &'static str {
        match self {
            FusedSource::Predicted => "predicted",
            FusedSource::Updated => "updated",
        }
    }
}

/// One row of the fused location stream.
#[derive(Debug, Clone)]
pub struct FusedLocation {
    pub t: f64,
    pub position: Vector2<f64>,
    pub position_cov: Matrix2<f64>,
    pub source: FusedSource,
}

const TIME_EPS: f64 = 1e-9;

/// Interleave motion predicts and fix updates by timestamp and emit one
/// fused location per event time (so every motion step yields an output).
/// When a motion and a fix share a timestamp the predict runs first.
/// Streams must be time-ordered.
pub fn run_fusion(
    motions: &[MotionEvent],
    fixes: &[FixEvent],
    initial: FilterState,
) -> Result<Vec<FusedLocation>> {
    check_ordered(motions.iter().map(|m| m.t))?;
    check_ordered(fixes.iter().map(|f| f.t))?;

    let mut state = initial;
    let mut out = Vec::with_capacity(motions.len() + fixes.len());
    let mut mi = 0;
    let mut fi = 0;
    while mi < motions.len() || fi < fixes.len() {
        // Group every event at the earliest pending timestamp.
        let t = match (motions.get(mi), fixes.get(fi)) {
            (Some(m), Some(f)) => m.t.min(f.t),
            (Some(m), None) => m.t,
            (None, Some(f)) => f.t,
            (None, None) => break,
        };
        let mut updated = false;
        while mi < motions.len() && motions[mi].t <= t + TIME_EPS {
            state = predict(&state, &motions[mi].motion);
            mi += 1;
        }
        while fi < fixes.len() && fixes[fi].t <= t + TIME_EPS {
            let (next, outcome) = update(&state, &fixes[fi].position, &fixes[fi].cov);
            state = next;
            updated = updated || outcome != UpdateOutcome::Skipped;
            fi += 1;
        }
        out.push(FusedLocation {
            t,
            position: state.position(),
            position_cov: state.position_cov(),
            source: if updated {
                FusedSource::Updated
            } else {
                FusedSource::Predicted
            },
        });
    }
    Ok(out)
}

fn check_ordered(times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if t < prev - TIME_EPS {
            return Err(Error::OutOfOrder(t));
        }
        prev = prev.max(t);
    }
    Ok(())
}

/// Heading of the displacement from `a` to `b`.
pub fn heading_between(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    normalize_angle((b.y - a.y).atan2(b.x - a.x))
}

/// Fused stream as CSV: t, x, y, covariance entries, source.
pub fn write_fused_csv(rows: &[FusedLocation], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,x,y,cov_xx,cov_xy,cov_yy,source")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t,
            r.position.x,
            r.position.y,
            r.position_cov[(0, 0)],
            r.position_cov[(0, 1)],
            r.position_cov[(1, 1)],
            r.source.label()
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egomotion::MotionStep;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn motion(rotation: f64, translation: f64, rot_range: f64, trans_range: f64) -> MotionEstimate {
        MotionEstimate {
            step: MotionStep {
                rotation,
                translation,
                dt: 0.1,
            },
            rot_error_range: rot_range,
            trans_error_range: trans_range,
        }
    }

    #[test]
    fn zero_motion_zero_ranges_is_identity() {
        let state = FilterState::diagonal(&GeoPose::new(3.0, 4.0, 0.5), 2.0, 0.1);
        let next = predict(&state, &motion(0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(next.mean, state.mean, epsilon = 1e-12);
        assert_relative_eq!(next.cov, state.cov, epsilon = 1e-12);
    }

    #[test]
    fn straight_motion_with_exact_heading_keeps_position_block() {
        // Heading variance zero: the Jacobian leaves the position block
        // untouched for straight motion.
        let state = FilterState::new(
            &GeoPose::new(0.0, 0.0, 0.0),
            Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 0.0)),
        );
        let next = predict(&state, &motion(0.0, 5.0, 0.0, 0.0));
        assert_relative_eq!(next.mean.x, 5.0, epsilon = 1e-12);
        assert_relative_eq!(next.mean.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.position_cov(), state.position_cov(), epsilon = 1e-12);
    }

    #[test]
    fn repeated_predicts_grow_trace() {
        let mut state = FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.2), 1.0, 0.05);
        let mut prev_trace = state.cov.trace();
        for _ in 0..50 {
            state = predict(&state, &motion(0.01, 1.0, 0.005, 0.05));
            let trace = state.cov.trace();
            assert!(trace >= prev_trace - 1e-12);
            prev_trace = trace;
        }
    }

    #[test]
    fn exact_measurement_limit() {
        let state = FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.0), 25.0, 0.3);
        let z = Vector2::new(7.0, -3.0);
        let (next, outcome) = update(&state, &z, &(Matrix2::identity() * 1e-12));
        assert_eq!(outcome, UpdateOutcome::Applied);
        assert_relative_eq!(next.mean.x, 7.0, epsilon = 1e-6);
        assert_relative_eq!(next.mean.y, -3.0, epsilon = 1e-6);
    }

    #[test]
    fn uninformative_measurement_limit() {
        let state = FilterState::diagonal(&GeoPose::new(2.0, 2.0, 0.0), 4.0, 0.3);
        let z = Vector2::new(100.0, 100.0);
        let (next, _) = update(&state, &z, &(Matrix2::identity() * 1e12));
        assert_relative_eq!(next.mean.x, 2.0, epsilon = 1e-6);
        assert_relative_eq!(next.mean.y, 2.0, epsilon = 1e-6);
        assert_relative_eq!(next.cov[(0, 0)], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn scalar_kalman_closed_form() {
        // 1-D prior (mu=0, var=1), z=1, r=1 -> posterior mu=0.5, var=0.5,
        // embedded as an axis-aligned 2-D case.
        let state = FilterState::new(
            &GeoPose::new(0.0, 0.0, 0.0),
            Matrix3::from_diagonal(&Vector3::new(1.0, 1e-12, 1e-12)),
        );
        let (next, _) = update(
            &state,
            &Vector2::new(1.0, 0.0),
            &Matrix2::from_diagonal(&Vector2::new(1.0, 1e12)),
        );
        assert_relative_eq!(next.mean.x, 0.5, epsilon = 1e-9);
        assert_relative_eq!(next.cov[(0, 0)], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn update_never_grows_position_block() {
        let mut rng = crate::rng::rng_for(5, "loewner");
        for _ in 0..200 {
            let pos_var = rng.random_range(0.5..20.0);
            let state = FilterState::diagonal(
                &GeoPose::new(0.0, 0.0, rng.random_range(0.0..6.0)),
                pos_var,
                rng.random_range(0.01..0.5),
            );
            let z = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let r = Matrix2::from_diagonal(&Vector2::new(
                rng.random_range(0.5..10.0),
                rng.random_range(0.5..10.0),
            ));
            let (next, _) = update(&state, &z, &r);
            // prior - posterior must be PSD on the position block.
            let diff = state.position_cov() - next.position_cov();
            let eig = nalgebra::SymmetricEigen::new((diff + diff.transpose()) * 0.5);
            assert!(
                eig.eigenvalues.iter().all(|l| *l >= -1e-9),
                "position covariance grew: {:?}",
                eig.eigenvalues
            );
        }
    }

    #[test]
    fn covariance_stays_psd_under_random_steps() {
        let mut rng = crate::rng::rng_for(6, "psd");
        let mut state = FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.0), 10.0, 0.5);
        for i in 0..20_000 {
            if rng.random::<f64>() < 0.7 {
                state = predict(
                    &state,
                    &motion(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(0.0..2.0),
                        rng.random_range(0.0..0.05),
                        rng.random_range(0.0..0.3),
                    ),
                );
            } else {
                let z = state.position()
                    + Vector2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
                let r = Matrix2::from_diagonal(&Vector2::new(
                    rng.random_range(0.01..100.0),
                    rng.random_range(0.01..100.0),
                ));
                state = update(&state, &z, &r).0;
            }
            let sym_err = (state.cov - state.cov.transpose()).norm();
            assert!(sym_err < 1e-12, "asymmetry {sym_err} at step {i}");
            let eig = nalgebra::SymmetricEigen::new(state.cov);
            assert!(
                eig.eigenvalues.iter().all(|l| *l >= -1e-9),
                "negative eigenvalue at step {i}: {:?}",
                eig.eigenvalues
            );
        }
    }

    #[test]
    fn dead_reckoning_with_exact_motions_reproduces_truth() {
        // Drive a curved path; exact controls and exact init reproduce the
        // ground truth through run_fusion with no fixes.
        let mut pose = GeoPose::new(1.0, 2.0, 0.3);
        let mut motions = Vec::new();
        let mut truth = vec![pose];
        for k in 0..500 {
            let step = MotionStep {
                rotation: 0.004 * ((k as f64 * 0.05).sin()),
                translation: 1.0,
                dt: 0.1,
            };
            pose = crate::egomotion::propagate(&pose, &step);
            truth.push(pose);
            motions.push(MotionEvent {
                t: (k + 1) as f64 * 0.1,
                motion: MotionEstimate {
                    step,
                    rot_error_range: 0.0,
                    trans_error_range: 0.0,
                },
            });
        }
        let initial = FilterState::diagonal(&truth[0], 0.0, 0.0);
        let fused = run_fusion(&motions, &[], initial).unwrap();
        assert_eq!(fused.len(), motions.len());
        for (f, t) in fused.iter().zip(truth.iter().skip(1)) {
            let err = (f.position.x - t.x).hypot(f.position.y - t.y);
            assert!(err < 1e-9, "dead-reckoning error {err}");
        }
    }

    #[test]
    fn fixes_only_stream_is_filtered_fix_sequence() {
        let fixes: Vec<FixEvent> = (0..10)
            .map(|k| FixEvent {
                t: k as f64,
                position: Vector2::new(k as f64, 1.0),
                cov: Matrix2::identity(),
            })
            .collect();
        let initial = FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.0), 100.0, 1.0);
        let fused = run_fusion(&[], &fixes, initial).unwrap();
        assert_eq!(fused.len(), fixes.len());
        assert!(fused.iter().all(|f| f.source == FusedSource::Updated));
        // With a huge prior the first output hugs the first fix.
        assert_relative_eq!(fused[0].position.x, 0.0, epsilon = 0.1);
        assert_relative_eq!(fused[0].position.y, 1.0, epsilon = 0.1);
    }

    #[test]
    fn out_of_order_streams_are_rejected() {
        let motions = vec![
            MotionEvent {
                t: 1.0,
                motion: motion(0.0, 1.0, 0.0, 0.0),
            },
            MotionEvent {
                t: 0.5,
                motion: motion(0.0, 1.0, 0.0, 0.0),
            },
        ];
        let initial = FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.0), 1.0, 1.0);
        assert!(matches!(
            run_fusion(&motions, &[], initial),
            Err(Error::OutOfOrder(_))
        ));
    }

    #[test]
    fn fusion_is_deterministic() {
        let motions: Vec<MotionEvent> = (0..100)
            .map(|k| MotionEvent {
                t: k as f64 * 0.1,
                motion: motion(0.01, 1.0, 0.004, 0.05),
            })
            .collect();
        let fixes: Vec<FixEvent> = (0..10)
            .map(|k| FixEvent {
                t: k as f64,
                position: Vector2::new(k as f64, 0.0),
                cov: Matrix2::identity() * 9.0,
            })
            .collect();
        let init = || FilterState::diagonal(&GeoPose::new(0.0, 0.0, 0.0), 25.0, 0.12);
        let a = run_fusion(&motions, &fixes, init()).unwrap();
        let b = run_fusion(&motions, &fixes, init()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.position_cov, y.position_cov);
        }
    }
}
