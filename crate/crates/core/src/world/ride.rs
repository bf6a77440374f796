//! Ride simulation: a vehicle following the road graph with smooth speed and
//! curvature-limited heading changes.
//!
//! The per-frame state update is rotate-then-translate — heading changes
//! first, then the vehicle moves along the new heading — so the exact
//! (rotation, translation) step between consecutive recorded poses can be
//! recovered from the poses alone and replayed without drift.

use super::{FrameRecord, World};
use crate::error::{Error, Result};
use crate::geo::{normalize_angle, wrap_signed, GeoPose};
use crate::rng::rng_for;
use rand::Rng;
use std::f64::consts::TAU;

/// Maximum simulated speed, m/s.
pub const MAX_SPEED: f64 = 15.0;
/// Curvature cap, 1/m: per-step heading change is at most this times the
/// step's translation.
const KAPPA_MAX: f64 = 0.25;
const ACCEL_MAX: f64 = 2.5;

/// A route resampled by arc length.
struct Route {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Route {
    fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point at arc length `s`, clamped to the route.
    fn point_at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.total_length());
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= self.points.len() {
            return *self.points.last().unwrap();
        }
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 {
            (s - self.cumulative[i]) / seg
        } else {
            0.0
        };
        let (ax, ay) = self.points[i];
        let (bx, by) = self.points[i + 1];
        (ax + t * (bx - ax), ay + t * (by - ay))
    }
}

/// Random walk over the road graph until the route is at least `min_len`
/// meters long. Never backtracks unless at a dead end.
fn random_route(world: &World, rng: &mut impl Rng, min_len: f64) -> Result<Route> {
    let graph = world.graph();
    if !graph.has_edges() {
        return Err(Error::NoRoads);
    }
    let start_candidates: Vec<u32> = (0..graph.nodes.len() as u32)
        .filter(|&n| !graph.adjacency[n as usize].is_empty())
        .collect();
    let mut current = start_candidates[rng.random_range(0..start_candidates.len())];
    let mut prev: Option<u32> = None;

    let mut points = vec![graph.nodes[current as usize]];
    let mut cumulative = vec![0.0];
    while *cumulative.last().unwrap() < min_len {
        let neighbors = &graph.adjacency[current as usize];
        let options: Vec<u32> = neighbors
            .iter()
            .copied()
            .filter(|&n| Some(n) != prev)
            .collect();
        let next = if options.is_empty() {
            neighbors[0] // dead end: backtrack
        } else {
            options[rng.random_range(0..options.len())]
        };
        let (px, py) = *points.last().unwrap();
        let (nx, ny) = graph.nodes[next as usize];
        let len = (nx - px).hypot(ny - py);
        points.push((nx, ny));
        cumulative.push(cumulative.last().unwrap() + len);
        prev = Some(current);
        current = next;
    }
    Ok(Route { points, cumulative })
}

/// Simulate the pose track of one ride without rendering features.
/// Timestamps are uniform at `1/frame_rate`; the pose sequence obeys the
/// rotate-then-translate step model with speed in (0, 15] m/s.
pub fn simulate_path(
    world: &World,
    seed: u64,
    duration: f64,
    frame_rate: f64,
) -> Result<Vec<(f64, GeoPose)>> {
    if !(duration > 0.0) {
        return Err(Error::InvalidRide(format!("duration {duration} <= 0")));
    }
    if !(frame_rate > 0.0) {
        return Err(Error::InvalidRide(format!("frame_rate {frame_rate} <= 0")));
    }
    let n_frames = ((duration * frame_rate).round() as usize).max(1);
    let dt = 1.0 / frame_rate;

    let mut rng = rng_for(seed, "ride");
    let route = random_route(world, &mut rng, MAX_SPEED * duration + 100.0)?;

    let (mut x, mut y) = route.points[0];
    let (bx, by) = route.point_at(2.0);
    let mut heading = normalize_angle((by - y).atan2(bx - x));
    let mut v: f64 = rng.random_range(4.0..10.0);
    let v_cruise: f64 = rng.random_range(6.0..12.0);
    let mod_period: f64 = rng.random_range(15.0..30.0);
    let mod_phase: f64 = rng.random_range(0.0..TAU);
    let mod_amp: f64 = rng.random_range(0.5..2.5);
    let mut s = 0.0;

    let mut track = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * dt;
        track.push((t, GeoPose::new(x, y, heading)));
        if k + 1 == n_frames {
            break;
        }

        let lookahead = (1.0 * v).clamp(4.0, 12.0);
        let (tx, ty) = route.point_at(s + lookahead);
        let desired = (ty - y).atan2(tx - x);
        let err = wrap_signed(desired - heading);

        // Slow down when the route bends away from the current heading.
        let wobble = mod_amp * (TAU * t / mod_period + mod_phase).sin();
        let target_v =
            ((v_cruise + wobble) * (1.0 - 0.7 * (err.abs() / 1.0).min(1.0))).clamp(1.5, MAX_SPEED);
        v = (v + (target_v - v).clamp(-ACCEL_MAX * dt, ACCEL_MAX * dt)).clamp(0.5, MAX_SPEED);

        let translation = v * dt;
        let rotation = err.clamp(-KAPPA_MAX * translation, KAPPA_MAX * translation);
        heading = normalize_angle(heading + rotation);
        x += translation * heading.cos();
        y += translation * heading.sin();
        s += translation;
    }
    Ok(track)
}

/// Simulate one ride: poses on the road graph plus rendered raw features.
/// `ride_id` must be caller-unique; frame ids are `ride_id * 1_000_000 + k`
/// so they are sequential within the ride.
pub fn simulate_ride(
    world: &World,
    ride_id: u64,
    seed: u64,
    duration: f64,
    frame_rate: f64,
) -> Result<Vec<FrameRecord>> {
    let track = simulate_path(world, seed, duration, frame_rate)?;
    let window = world.config().nuisance_window.max(1);
    let mut nuisance_rng = rng_for(seed, "ride-nuisance");
    let mut nuisance_seed = 0u64;
    let mut frames = Vec::with_capacity(track.len());
    for (k, (t, pose)) in track.into_iter().enumerate() {
        if k % window == 0 {
            nuisance_seed = nuisance_rng.random();
        }
        let raw_feature = world.render_feature(&pose, nuisance_seed)?;
        frames.push(FrameRecord {
            frame_id: ride_id * 1_000_000 + k as u64,
            ride_id,
            t,
            pose,
            raw_feature,
            nuisance_seed,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{RoadLayout, WorldConfig};

    fn test_world(seed: u64) -> World {
        World::generate(
            WorldConfig {
                width: 600.0,
                height: 400.0,
                roads: RoadLayout::Grid { spacing: 100.0 },
                ..WorldConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn forty_second_ride_has_400_frames_on_roads() {
        let world = test_world(1);
        let frames = simulate_ride(&world, 7, 7, 40.0, 10.0).unwrap();
        assert_eq!(frames.len(), 400);
        for f in &frames {
            let d = world.distance_to_road(f.pose.x, f.pose.y);
            assert!(d <= 4.0, "frame at t={} is {d:.2} m off-road", f.t);
        }
    }

    #[test]
    fn tenth_second_ride_has_one_frame() {
        let world = test_world(1);
        let frames = simulate_ride(&world, 1, 3, 0.1, 10.0).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].t, 0.0);
    }

    #[test]
    fn frame_spacing_respects_speed_cap() {
        let world = test_world(2);
        for seed in 0..100 {
            let track = simulate_path(&world, seed, 10.0, 10.0).unwrap();
            for w in track.windows(2) {
                let d = w[0].1.distance_to(&w[1].1);
                assert!(
                    d <= MAX_SPEED / 10.0 + 1e-9,
                    "spacing {d} exceeds cap at seed {seed}"
                );
            }
        }
    }

    #[test]
    fn timestamps_strictly_increase() {
        let world = test_world(3);
        let frames = simulate_ride(&world, 2, 5, 20.0, 10.0).unwrap();
        for w in frames.windows(2) {
            assert!(w[1].t > w[0].t);
            assert_eq!(w[1].frame_id, w[0].frame_id + 1);
        }
    }

    #[test]
    fn ride_is_deterministic() {
        let world = test_world(4);
        let a = simulate_ride(&world, 9, 11, 15.0, 10.0).unwrap();
        let b = simulate_ride(&world, 9, 11, 15.0, 10.0).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.pose, fb.pose);
            assert_eq!(fa.raw_feature, fb.raw_feature);
            assert_eq!(fa.nuisance_seed, fb.nuisance_seed);
        }
    }

    #[test]
    fn ride_fails_without_drivable_roads() {
        let world = World::generate(
            WorldConfig {
                width: 10.0,
                height: 10.0,
                roads: RoadLayout::Polylines(vec![vec![(5.0, 5.0)]]),
                ..WorldConfig::default()
            },
            1,
        )
        .unwrap();
        assert!(matches!(
            simulate_ride(&world, 0, 1, 10.0, 10.0),
            Err(Error::NoRoads)
        ));
    }

    #[test]
    fn rejects_bad_params() {
        let world = test_world(5);
        assert!(simulate_ride(&world, 0, 1, 0.0, 10.0).is_err());
        assert!(simulate_ride(&world, 0, 1, 10.0, 0.0).is_err());
    }
}
