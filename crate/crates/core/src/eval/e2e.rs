//! End-to-end experiment: GPS noise model -> coarse retrieval fixes ->
//! ego-motion fusion over held-out rides, producing paired raw/fused error
//! distributions and per-ride waypoint traces.

use super::{select_keyframes, Artifacts, BenchmarkConfig};
use crate::egomotion::{FramePair, MotionEstimator};
use crate::error::Result;
use crate::fusion::{run_fusion, FilterState, FixEvent, MotionEvent};
use crate::metrics::error_cdf;
use crate::retrieval::{build_index, coarse_localize_filtered, KeyframeDB};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct WaypointRow {
    pub ride_id: u64,
    pub t: f64,
    pub series: &'static str,
    pub x: f64,
    pub y: f64,
}

pub struct E2eResult {
    pub raw_errors: Vec<f64>,
    pub fused_errors: Vec<f64>,
    pub coarse_errors: Vec<f64>,
    /// Fraction of coarse queries that yielded a fix.
    pub coarse_recall: f64,
    pub raw_cdf: Vec<(u32, f64)>,
    pub fused_cdf: Vec<(u32, f64)>,
    pub waypoints: Vec<WaypointRow>,
}

struct RideOutcome {
    raw_errors: Vec<f64>,
    fused_errors: Vec<f64>,
    coarse_errors: Vec<f64>,
    coarse_queries: usize,
    coarse_yielded: usize,
    waypoints: Vec<WaypointRow>,
}

fn run_ride(
    config: &BenchmarkConfig,
    artifacts: &Artifacts,
    index: &KeyframeDB,
    ride_idx: usize,
) -> Result<RideOutcome> {
    let frames = &artifacts.rides[ride_idx];
    let gps = &artifacts.fixes[ride_idx];
    let ride_id = frames[0].ride_id;

    let mut waypoints = Vec::new();
    let mut raw_errors = Vec::with_capacity(frames.len());
    for (f, fix) in frames.iter().zip(gps) {
        raw_errors.push(fix.true_error);
        waypoints.push(WaypointRow {
            ride_id,
            t: f.t,
            series: "gt",
            x: f.pose.x,
            y: f.pose.y,
        });
        waypoints.push(WaypointRow {
            ride_id,
            t: f.t,
            series: "raw",
            x: fix.position.x,
            y: fix.position.y,
        });
    }

    // Coarse fixes at the configured stride, searching within a radius
    // scaled from the reported GPS accuracy.
    let mut coarse_fixes: Vec<FixEvent> = Vec::new();
    let mut coarse_errors = Vec::new();
    let mut coarse_queries = 0usize;
    let params = config.retrieval.params();
    for (k, (f, fix)) in frames.iter().zip(gps).enumerate() {
        if k % config.fix_stride.max(1) != 0 {
            continue;
        }
        coarse_queries += 1;
        let radius = (3.0 * fix.reported_accuracy).clamp(30.0, 200.0);
        let descriptor = artifacts.model_star.embed(&f.raw_feature)?;
        if let Some(coarse) = coarse_localize_filtered(
            index,
            &descriptor,
            fix,
            radius,
            artifacts.threshold_star,
            &params,
            Some(ride_id),
        )? {
            coarse_errors.push((coarse.position.x - f.pose.x).hypot(coarse.position.y - f.pose.y));
            waypoints.push(WaypointRow {
                ride_id,
                t: f.t,
                series: "coarse",
                x: coarse.position.x,
                y: coarse.position.y,
            });
            coarse_fixes.push(FixEvent {
                t: f.t,
                position: coarse.position,
                cov: coarse.measurement_cov(),
            });
        }
    }

    let mut motions = Vec::with_capacity(frames.len().saturating_sub(1));
    for w in frames.windows(2) {
        let pair = FramePair::new(&w[0], &w[1])?;
        motions.push(MotionEvent {
            t: w[1].t,
            motion: artifacts.estimator.estimate(&pair)?,
        });
    }

    // Initialize from the first coarse fix when one arrives within 2 s,
    // else from the first raw GPS fix. Heading comes from the first fix's
    // reported course: at urban position-noise levels a two-point
    // displacement heading is off by 45 degrees or more and the filter
    // diverges before it can recover.
    let heading = gps[0].position.heading;
    let heading_var = (20.0_f64.to_radians())
        .powi(2)
        .max((3.0 * config.gps.heading_sigma).powi(2));
    let first_coarse_early = coarse_fixes.first().filter(|c| c.t <= 2.0);
    let (init_pos, init_cov, skip_first_coarse) = match first_coarse_early {
        Some(c) => (c.position, c.cov, true),
        None => (
            Vector2::new(gps[0].position.x, gps[0].position.y),
            Matrix2::identity() * gps[0].reported_accuracy * gps[0].reported_accuracy,
            false,
        ),
    };
    let initial = FilterState::new(
        &crate::GeoPose::new(init_pos.x, init_pos.y, heading),
        nalgebra::Matrix3::new(
            init_cov[(0, 0)],
            init_cov[(0, 1)],
            0.0,
            init_cov[(1, 0)],
            init_cov[(1, 1)],
            0.0,
            0.0,
            0.0,
            heading_var,
        ),
    );
    let fix_stream = if skip_first_coarse {
        &coarse_fixes[1..]
    } else {
        &coarse_fixes[..]
    };
    let fused = run_fusion(&motions, fix_stream, initial)?;

    let mut fused_errors = Vec::with_capacity(fused.len());
    for loc in &fused {
        let k = (loc.t * config.rides.frame_rate).round() as usize;
        if let Some(f) = frames.get(k) {
            fused_errors.push((loc.position.x - f.pose.x).hypot(loc.position.y - f.pose.y));
            waypoints.push(WaypointRow {
                ride_id,
                t: loc.t,
                series: "fused",
                x: loc.position.x,
                y: loc.position.y,
            });
        }
    }

    Ok(RideOutcome {
        raw_errors,
        fused_errors,
        coarse_yielded: coarse_errors.len(),
        coarse_errors,
        coarse_queries,
        waypoints,
    })
}

/// Run retrieval + fusion over the held-out eval rides against a
/// whole-world keyframe index built from the map rides.
pub fn experiment_end_to_end(config: &BenchmarkConfig, artifacts: &Artifacts) -> Result<E2eResult> {
    let map_frames: Vec<_> = artifacts.rides[..config.n_map_rides()]
        .iter()
        .flatten()
        .cloned()
        .collect();
    let (keyframes, _) = select_keyframes(
        map_frames,
        artifacts.world.config().cell_size,
        config.keyframes_per_cell,
    );
    let index = build_index(&keyframes, &artifacts.model_star)?;

    let first_eval = config.n_map_rides();
    let outcomes: Vec<RideOutcome> = (first_eval..artifacts.rides.len())
        .into_par_iter()
        .map(|i| run_ride(config, artifacts, &index, i))
        .collect::<Result<_>>()?;

    let mut raw_errors = Vec::new();
    let mut fused_errors = Vec::new();
    let mut coarse_errors = Vec::new();
    let mut waypoints = Vec::new();
    let mut queries = 0usize;
    let mut yielded = 0usize;
    for o in outcomes {
        raw_errors.extend(o.raw_errors);
        fused_errors.extend(o.fused_errors);
        coarse_errors.extend(o.coarse_errors);
        waypoints.extend(o.waypoints);
        queries += o.coarse_queries;
        yielded += o.coarse_yielded;
    }
    let raw_cdf = error_cdf(&raw_errors)?;
    let fused_cdf = error_cdf(&fused_errors)?;
    Ok(E2eResult {
        raw_errors,
        fused_errors,
        coarse_errors,
        coarse_recall: yielded as f64 / queries.max(1) as f64,
        raw_cdf,
        fused_cdf,
        waypoints,
    })
}
