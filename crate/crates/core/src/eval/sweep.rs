//! Fix-noise sweep: corrupt ground-truth positions with Gaussian noise of
//! varying sigma, fuse with calibrated ego-motion, and report the mean
//! fused error per sigma.

use super::BenchmarkConfig;
use crate::egomotion::{FramePair, MotionEstimator, SimulatedEstimator};
use crate::error::Result;
use crate::fusion::{run_fusion, FilterState, FixEvent, MotionEvent};
use crate::rng::{derive_seed_indexed, rng_for_indexed};
use crate::world::{simulate_path, FrameRecord, World};
use crate::GeoPose;
use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sigma: f64,
    pub fused_mean_error: f64,
    pub raw_mean_error: f64,
    /// sigma-to-fused-error improvement ratio (raw fix error scale over
    /// fused error).
    pub improvement: f64,
}

/// Per-ride fused mean error for one sigma.
fn fuse_one_ride(
    config: &BenchmarkConfig,
    world: &World,
    estimator: &SimulatedEstimator,
    sigma: f64,
    ride_idx: usize,
) -> Result<(f64, f64)> {
    let seed = derive_seed_indexed(config.seed, "sweep-ride", ride_idx as u64);
    let ride_id = 900_000 + ride_idx as u64;
    let track = simulate_path(world, seed, config.sweep_duration, config.rides.frame_rate)?;
    // Feature-free frame records: the simulated estimator reads poses only.
    let frames: Vec<FrameRecord> = track
        .iter()
        .enumerate()
        .map(|(k, (t, pose))| FrameRecord {
            frame_id: ride_id * 1_000_000 + k as u64,
            ride_id,
            t: *t,
            pose: *pose,
            raw_feature: Vec::new(),
            nuisance_seed: 0,
        })
        .collect();

    let mut motions = Vec::with_capacity(frames.len().saturating_sub(1));
    for w in frames.windows(2) {
        let pair = FramePair::new(&w[0], &w[1])?;
        motions.push(MotionEvent {
            t: w[1].t,
            motion: estimator.estimate(&pair)?,
        });
    }

    let normal = StandardNormal;
    let meas_var = (sigma * sigma).max(1e-6);
    let mut fixes = Vec::new();
    let mut raw_err_sum = 0.0;
    let mut first_heading = frames[0].pose.heading;
    for (k, f) in frames.iter().enumerate().step_by(config.fix_stride.max(1)) {
        let mut rng = rng_for_indexed(seed, "sweep-fix", k as u64);
        let dx: f64 = normal.sample(&mut rng);
        let dy: f64 = normal.sample(&mut rng);
        let position = Vector2::new(f.pose.x + sigma * dx, f.pose.y + sigma * dy);
        if k == 0 {
            // Fixes stand in for GPS, which reports course over ground; the
            // filter seeds its heading from the first fix's course.
            let dh: f64 = normal.sample(&mut rng);
            first_heading = f.pose.heading + config.gps.heading_sigma * dh;
        }
        raw_err_sum += (position.x - f.pose.x).hypot(position.y - f.pose.y);
        fixes.push(FixEvent {
            t: f.t,
            position,
            cov: Matrix2::identity() * meas_var,
        });
    }
    let raw_me = raw_err_sum / fixes.len() as f64;

    let init_pose = GeoPose::new(fixes[0].position.x, fixes[0].position.y, first_heading);
    let heading_var = (20.0_f64.to_radians())
        .powi(2)
        .max((3.0 * config.gps.heading_sigma).powi(2));
    let initial = FilterState::diagonal(&init_pose, meas_var, heading_var);

    let fused = run_fusion(&motions, &fixes[1..], initial)?;
    let mut err_sum = 0.0;
    let mut n = 0usize;
    for loc in &fused {
        let k = (loc.t * config.rides.frame_rate).round() as usize;
        if let Some(f) = frames.get(k) {
            err_sum += (loc.position.x - f.pose.x).hypot(loc.position.y - f.pose.y);
            n += 1;
        }
    }
    Ok((err_sum / n.max(1) as f64, raw_me))
}

/// Run the sweep: for each sigma, the mean fused error over the configured
/// ride count.
pub fn experiment_noise_sweep(
    config: &BenchmarkConfig,
    world: &World,
    estimator: &SimulatedEstimator,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(config.sweep_sigmas.len());
    for &sigma in &config.sweep_sigmas {
        let per_ride: Vec<(f64, f64)> = (0..config.sweep_rides)
            .into_par_iter()
            .map(|r| fuse_one_ride(config, world, estimator, sigma, r))
            .collect::<Result<_>>()?;
        let fused_me = per_ride.iter().map(|p| p.0).sum::<f64>() / per_ride.len() as f64;
        let raw_me = per_ride.iter().map(|p| p.1).sum::<f64>() / per_ride.len() as f64;
        rows.push(SweepRow {
            sigma,
            fused_mean_error: fused_me,
            raw_mean_error: raw_me,
            improvement: if fused_me > 0.0 { sigma / fused_me } else { f64::INFINITY },
        });
    }
    Ok(rows)
}
