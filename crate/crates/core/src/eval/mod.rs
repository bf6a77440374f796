//! Benchmark orchestration: build the synthetic world and rides, train the
//! two descriptor models, calibrate retrieval and ego-motion, and run the
//! three experiments (retrieval comparison, fix-noise sweep, end-to-end).
//!
//! Everything derives from (config, seed); experiments parallelize across
//! rides and queries with order-preserving collection and sequential
//! aggregation, so outputs are reproducible bit-for-bit.

mod e2e;
mod export;
mod retrieval_exp;
mod sweep;

pub use e2e::{experiment_end_to_end, E2eResult, WaypointRow};
pub use export::{
    write_cdf_csv, write_e2e_errors_csv, write_reports_csv, write_sweep_csv, write_waypoints_csv,
};
pub use retrieval_exp::{
    build_retrieval_setup, experiment_retrieval, Method, RetrievalExperimentResult,
    RetrievalSetup,
};
pub use sweep::{experiment_noise_sweep, SweepRow};

use crate::egomotion::{calibrate_confidence, ConfidenceCalibration, SimulatedEstimator};
use crate::embed::{train, EmbeddingModel, TrainRecord, TrainSchedule};
use crate::error::Result;
use crate::retrieval::{calibrate_threshold, RetrievalParams};
use crate::rng::{derive_seed, derive_seed_indexed, rng_for};
use crate::samplers::{DbTripletSource, FrameDB, SamplerMix};
use crate::world::{
    simulate_ride, FrameRecord, GpsNoiseModel, GpsSimulator, NoisyFix, RoadLayout, World,
    WorldConfig,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Axis-aligned rectangle, used for the held-out test area.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RideConfig {
    pub count: usize,
    pub duration: f64,
    pub frame_rate: f64,
}

/// Serializable retrieval knobs (mirrors [`RetrievalParams`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub min_neighbors: usize,
    pub heading_tolerance_deg: f64,
    pub literal_weights: bool,
}

impl RetrievalConfig {
    pub fn params(&self) -> RetrievalParams {
        RetrievalParams {
            min_neighbors: self.min_neighbors,
            heading_tolerance: self.heading_tolerance_deg.to_radians(),
            literal_weights: self.literal_weights,
        }
    }
}

/// Full benchmark configuration. `Default` is the desk-scale setup
/// (~2 km^2, 300 rides, ~60k frames); [`BenchmarkConfig::standard`] is the
/// fixed-seed benchmark the acceptance suite runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub rides: RideConfig,
    pub gps: GpsNoiseModel,
    /// Geographic holdout: frames inside are never used for training.
    pub test_area: Rect,
    /// Per-cell cap when selecting keyframes (uniformity along roads).
    pub keyframes_per_cell: usize,
    /// Retrieval-experiment query budget.
    pub n_queries: usize,
    /// Frames used for threshold calibration (subsampled from training).
    pub n_validation_frames: usize,
    pub schedule: TrainSchedule,
    pub motion_sigma_rot: f64,
    pub motion_sigma_trans: f64,
    /// Rides used for ego-motion confidence calibration.
    pub calibration_rides: usize,
    pub retrieval: RetrievalConfig,
    /// Max-GPS-error budgets for the retrieval experiment, meters.
    pub budgets: Vec<f64>,
    pub sweep_sigmas: Vec<f64>,
    pub sweep_rides: usize,
    pub sweep_duration: f64,
    /// Held-out rides for the end-to-end experiment.
    pub eval_rides: usize,
    /// Frames between position fixes in fusion experiments (10 = 1 Hz at
    /// the default frame rate).
    pub fix_stride: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            world: WorldConfig {
                width: 1600.0,
                height: 1250.0,
                roads: RoadLayout::Grid { spacing: 110.0 },
                ..WorldConfig::default()
            },
            rides: RideConfig {
                count: 300,
                duration: 20.0,
                frame_rate: 10.0,
            },
            gps: GpsNoiseModel::default(),
            test_area: Rect {
                x0: 420.0,
                y0: 480.0,
                x1: 1170.0,
                y1: 760.0,
            },
            keyframes_per_cell: 10,
            n_queries: 2000,
            n_validation_frames: 5000,
            schedule: TrainSchedule::default(),
            motion_sigma_rot: 0.004,
            motion_sigma_trans: 0.05,
            calibration_rides: 10,
            retrieval: RetrievalConfig {
                min_neighbors: 5,
                heading_tolerance_deg: 20.0,
                literal_weights: false,
            },
            budgets: vec![50.0, 200.0],
            sweep_sigmas: vec![3.0, 10.0, 20.0, 30.0],
            sweep_rides: 50,
            sweep_duration: 40.0,
            eval_rides: 50,
            fix_stride: 10,
        }
    }
}

impl BenchmarkConfig {
    /// The fixed benchmark the acceptance criteria run against.
    pub fn standard() -> Self {
        Self {
            seed: 1,
            world: WorldConfig {
                width: 1200.0,
                height: 800.0,
                roads: RoadLayout::Grid { spacing: 100.0 },
                ..WorldConfig::default()
            },
            rides: RideConfig {
                count: 150,
                duration: 40.0,
                frame_rate: 10.0,
            },
            test_area: Rect {
                x0: 225.0,
                y0: 260.0,
                x1: 975.0,
                y1: 540.0,
            },
            schedule: TrainSchedule {
                steps: 15_000,
                batch_size: 8,
                ..TrainSchedule::default()
            },
            n_queries: 2000,
            ..Self::default()
        }
    }

    /// Miniature configuration for fast determinism and CLI tests.
    pub fn tiny() -> Self {
        Self {
            seed: 1,
            world: WorldConfig {
                width: 700.0,
                height: 500.0,
                roads: RoadLayout::Grid { spacing: 100.0 },
                ..WorldConfig::default()
            },
            rides: RideConfig {
                count: 30,
                duration: 20.0,
                frame_rate: 10.0,
            },
            test_area: Rect {
                x0: 150.0,
                y0: 150.0,
                x1: 550.0,
                y1: 350.0,
            },
            keyframes_per_cell: 10,
            n_queries: 120,
            n_validation_frames: 1500,
            schedule: TrainSchedule {
                steps: 400,
                batch_size: 4,
                ..TrainSchedule::default()
            },
            calibration_rides: 6,
            budgets: vec![50.0],
            sweep_sigmas: vec![3.0, 10.0],
            sweep_rides: 4,
            sweep_duration: 20.0,
            eval_rides: 4,
            ..Self::default()
        }
    }

    pub fn world_seed(&self) -> u64 {
        derive_seed(self.seed, "world")
    }

    pub fn ride_seed(&self, idx: usize) -> u64 {
        derive_seed_indexed(self.seed, "ride", idx as u64)
    }

    pub fn n_map_rides(&self) -> usize {
        self.rides.count.saturating_sub(self.eval_rides)
    }
}

/// Everything the experiments consume, built once per benchmark run.
pub struct Artifacts {
    pub world: World,
    /// All rides; the last `eval_rides` are held out end-to-end.
    pub rides: Vec<Vec<FrameRecord>>,
    pub fixes: Vec<Vec<NoisyFix>>,
    pub model_regular: EmbeddingModel,
    pub model_star: EmbeddingModel,
    pub history_regular: Vec<TrainRecord>,
    pub history_star: Vec<TrainRecord>,
    pub threshold_regular: f64,
    pub threshold_star: f64,
    pub calibration: ConfidenceCalibration,
    pub estimator: SimulatedEstimator,
}

pub fn build_world(config: &BenchmarkConfig) -> Result<World> {
    World::generate(config.world.clone(), config.world_seed())
}

/// Simulate all rides with their GPS fix streams, in parallel by ride.
pub fn simulate_rides(
    config: &BenchmarkConfig,
    world: &World,
) -> Result<(Vec<Vec<FrameRecord>>, Vec<Vec<NoisyFix>>)> {
    let per_ride: Vec<(Vec<FrameRecord>, Vec<NoisyFix>)> = (0..config.rides.count)
        .into_par_iter()
        .map(|i| {
            let seed = config.ride_seed(i);
            let frames = simulate_ride(
                world,
                i as u64,
                seed,
                config.rides.duration,
                config.rides.frame_rate,
            )?;
            let mut gps = GpsSimulator::new(config.gps.clone(), derive_seed(seed, "gps-stream"))?;
            let fixes = frames.iter().map(|f| gps.fix_at(&f.pose, f.t)).collect();
            Ok((frames, fixes))
        })
        .collect::<Result<_>>()?;
    Ok(per_ride.into_iter().unzip())
}

/// Frames of non-eval rides outside the test area (training pool).
pub fn training_frames(config: &BenchmarkConfig, rides: &[Vec<FrameRecord>]) -> Vec<FrameRecord> {
    rides[..config.n_map_rides()]
        .iter()
        .flatten()
        .filter(|f| !config.test_area.contains(f.pose.x, f.pose.y))
        .cloned()
        .collect()
}

/// Frames of non-eval rides inside the test area (keyframe + query pool).
pub fn test_area_frames(config: &BenchmarkConfig, rides: &[Vec<FrameRecord>]) -> Vec<FrameRecord> {
    rides[..config.n_map_rides()]
        .iter()
        .flatten()
        .filter(|f| config.test_area.contains(f.pose.x, f.pose.y))
        .cloned()
        .collect()
}

/// Cap frames per 10 m cell, round-robin across the pool order, yielding
/// an approximately uniform keyframe distribution along drivable paths.
/// Returns (keyframes, leftovers).
pub fn select_keyframes(
    frames: Vec<FrameRecord>,
    cell_size: f64,
    per_cell: usize,
) -> (Vec<FrameRecord>, Vec<FrameRecord>) {
    let mut counts: HashMap<(i64, i64), usize> = HashMap::new();
    let mut keyframes = Vec::new();
    let mut leftovers = Vec::new();
    for f in frames {
        let cell = (
            (f.pose.x / cell_size).floor() as i64,
            (f.pose.y / cell_size).floor() as i64,
        );
        let count = counts.entry(cell).or_insert(0);
        if *count < per_cell {
            *count += 1;
            keyframes.push(f);
        } else {
            leftovers.push(f);
        }
    }
    (keyframes, leftovers)
}

/// Train the two descriptor models: regular triplets only, and the full
/// three-generator mix.
pub fn train_models(
    config: &BenchmarkConfig,
    training_db: &FrameDB,
) -> Result<(
    (EmbeddingModel, Vec<TrainRecord>),
    (EmbeddingModel, Vec<TrainRecord>),
)> {
    let raw_dim = config.world.raw_dim();
    let regular_schedule = TrainSchedule {
        seed: derive_seed(config.seed, "train-regular"),
        ..config.schedule.clone()
    };
    let star_schedule = TrainSchedule {
        seed: derive_seed(config.seed, "train-star"),
        ..config.schedule.clone()
    };
    let init_regular = EmbeddingModel::new(raw_dim, derive_seed(config.seed, "init-regular"));
    let init_star = EmbeddingModel::new(raw_dim, derive_seed(config.seed, "init-star"));

    let regular = train(
        init_regular,
        &DbTripletSource::new(training_db, SamplerMix::Regular),
        &regular_schedule,
    )?;
    let star = train(
        init_star,
        &DbTripletSource::new(training_db, SamplerMix::All),
        &star_schedule,
    )?;
    Ok((regular, star))
}

/// Seeded subsample used for threshold calibration.
pub fn validation_frames(config: &BenchmarkConfig, training: &[FrameRecord]) -> Vec<FrameRecord> {
    let mut idx: Vec<usize> = (0..training.len()).collect();
    let mut rng = rng_for(config.seed, "validation-subsample");
    idx.shuffle(&mut rng);
    idx.truncate(config.n_validation_frames);
    idx.sort_unstable();
    idx.into_iter().map(|i| training[i].clone()).collect()
}

/// Build the full artifact set for a benchmark run.
pub fn build_artifacts(config: &BenchmarkConfig) -> Result<Artifacts> {
    let world = build_world(config)?;
    let (rides, fixes) = simulate_rides(config, &world)?;

    let training = training_frames(config, &rides);
    let training_db = FrameDB::build(training);
    let ((model_regular, history_regular), (model_star, history_star)) =
        train_models(config, &training_db)?;

    let validation = validation_frames(config, training_db.frames());
    let threshold_regular = calibrate_threshold(&model_regular, &validation)?;
    let threshold_star = calibrate_threshold(&model_star, &validation)?;

    let base_estimator = SimulatedEstimator::new(
        config.motion_sigma_rot,
        config.motion_sigma_trans,
        derive_seed(config.seed, "motion-noise"),
    );
    let calib_rides: Vec<Vec<FrameRecord>> = rides
        [..config.calibration_rides.min(config.n_map_rides())]
        .to_vec();
    let calibration = calibrate_confidence(&base_estimator, &calib_rides)?;
    let estimator = base_estimator.with_ranges(&calibration);

    Ok(Artifacts {
        world,
        rides,
        fixes,
        model_regular,
        model_star,
        history_regular,
        history_star,
        threshold_regular,
        threshold_star,
        calibration,
        estimator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyframe_selection_caps_cells() {
        let config = BenchmarkConfig::tiny();
        let world = build_world(&config).unwrap();
        let (rides, _) = simulate_rides(&config, &world).unwrap();
        let in_area = test_area_frames(&config, &rides);
        assert!(!in_area.is_empty());
        let (keyframes, leftovers) =
            select_keyframes(in_area.clone(), 10.0, config.keyframes_per_cell);
        assert_eq!(keyframes.len() + leftovers.len(), in_area.len());
        let mut counts: HashMap<(i64, i64), usize> = HashMap::new();
        for f in &keyframes {
            *counts
                .entry((
                    (f.pose.x / 10.0).floor() as i64,
                    (f.pose.y / 10.0).floor() as i64,
                ))
                .or_insert(0) += 1;
        }
        assert!(counts.values().all(|c| *c <= config.keyframes_per_cell));
    }

    #[test]
    fn geographic_holdout_is_clean() {
        let config = BenchmarkConfig::tiny();
        let world = build_world(&config).unwrap();
        let (rides, _) = simulate_rides(&config, &world).unwrap();
        for f in training_frames(&config, &rides) {
            assert!(!config.test_area.contains(f.pose.x, f.pose.y));
        }
        for f in test_area_frames(&config, &rides) {
            assert!(config.test_area.contains(f.pose.x, f.pose.y));
        }
    }

    #[test]
    fn ride_simulation_is_reproducible_across_calls() {
        let config = BenchmarkConfig::tiny();
        let world = build_world(&config).unwrap();
        let (a, fa) = simulate_rides(&config, &world).unwrap();
        let (b, fb) = simulate_rides(&config, &world).unwrap();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.pose, y.pose);
                assert_eq!(x.raw_feature, y.raw_feature);
            }
        }
        for (ra, rb) in fa.iter().zip(&fb) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.position, y.position);
            }
        }
    }
}
