//! Retrieval comparison: GPS-NN baseline vs the two descriptor models at a
//! given max-GPS-error budget.
//!
//! Each query frame's GPS position is distorted uniformly in a disc of the
//! budget radius; each method then localizes within that radius. Queries
//! never see keyframes from their own ride.

use super::{select_keyframes, Artifacts, BenchmarkConfig};
use crate::embed::EmbeddingModel;
use crate::error::Result;
use crate::metrics::{accuracy_metrics, LocalizationReport};
use crate::retrieval::{build_index, coarse_localize_filtered, gps_nn_baseline, KeyframeDB};
use crate::rng::rng_for_indexed;
use crate::world::{FrameRecord, NoisyFix};
use crate::GeoPose;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::TAU;

/// Localization method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Mean of the 10 geo-nearest keyframes.
    GpsNn,
    /// Descriptor trained with regular triplets only.
    VlGist,
    /// Descriptor trained with all three generators.
    VlGistStar,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::GpsNn => "gps-nn",
            Method::VlGist => "vl-gist",
            Method::VlGistStar => "vl-gist*",
        }
    }
}

pub struct RetrievalExperimentResult {
    pub budget: f64,
    /// (method, report), in fixed method order.
    pub reports: Vec<(Method, LocalizationReport)>,
    /// Per-query rows for the VL-GIST* method: (query frame id, error).
    pub star_errors: Vec<(u64, Option<f64>)>,
}

/// Keyframe/query split plus the two per-model indexes.
pub struct RetrievalSetup {
    pub index_regular: KeyframeDB,
    pub index_star: KeyframeDB,
    pub queries: Vec<FrameRecord>,
}

/// Build the keyframe indexes (one per model — descriptors differ) and the
/// query set from the held-out test area.
pub fn build_retrieval_setup(
    config: &BenchmarkConfig,
    artifacts: &Artifacts,
) -> Result<RetrievalSetup> {
    let in_area = super::test_area_frames(config, &artifacts.rides);
    let (keyframes, leftovers) = select_keyframes(
        in_area,
        artifacts.world.config().cell_size,
        config.keyframes_per_cell,
    );
    let index_regular = build_index(&keyframes, &artifacts.model_regular)?;
    let index_star = build_index(&keyframes, &artifacts.model_star)?;

    let mut queries = leftovers;
    let mut rng = crate::rng::rng_for(config.seed, "query-subsample");
    queries.shuffle(&mut rng);
    queries.truncate(config.n_queries);
    queries.sort_by_key(|f| f.frame_id);
    Ok(RetrievalSetup {
        index_regular,
        index_star,
        queries,
    })
}

/// Distort a pose's position uniformly in a disc of `radius` and perturb
/// the heading with the configured GPS heading noise.
fn distorted_fix(
    config: &BenchmarkConfig,
    frame: &FrameRecord,
    radius: f64,
    tag: &str,
) -> NoisyFix {
    let mut rng = rng_for_indexed(config.seed, tag, frame.frame_id);
    let angle = rng.random_range(0.0..TAU);
    // Uniform over the disc: radius scales with sqrt(u).
    let r = radius * rng.random::<f64>().sqrt();
    let normal = StandardNormal;
    let dh: f64 = normal.sample(&mut rng);
    let heading = frame.pose.heading + config.gps.heading_sigma * dh;
    NoisyFix {
        position: GeoPose::new(
            frame.pose.x + r * angle.cos(),
            frame.pose.y + r * angle.sin(),
            heading,
        ),
        reported_accuracy: radius.max(1.0),
        true_error: r,
    }
}

fn localize_with_model(
    config: &BenchmarkConfig,
    index: &KeyframeDB,
    model: &EmbeddingModel,
    threshold: f64,
    frame: &FrameRecord,
    fix: &NoisyFix,
    budget: f64,
) -> Result<Option<f64>> {
    let descriptor = model.embed(&frame.raw_feature)?;
    let out = coarse_localize_filtered(
        index,
        &descriptor,
        fix,
        budget,
        threshold,
        &config.retrieval.params(),
        Some(frame.ride_id),
    )?;
    Ok(out.map(|f| (f.position.x - frame.pose.x).hypot(f.position.y - frame.pose.y)))
}

/// Run the three methods at one budget over the query set.
pub fn experiment_retrieval(
    config: &BenchmarkConfig,
    artifacts: &Artifacts,
    setup: &RetrievalSetup,
    budget: f64,
) -> Result<RetrievalExperimentResult> {
    let tag = format!("distort/{budget}");
    let rows: Vec<(u64, Option<f64>, Option<f64>, Option<f64>)> = setup
        .queries
        .par_iter()
        .map(|frame| {
            let fix = distorted_fix(config, frame, budget, &tag);
            // GPS-NN yields a fix whenever at least 10 keyframes sit within
            // the budget radius of the distorted position.
            let in_range = setup
                .index_star
                .within_radius((fix.position.x, fix.position.y), budget)
                .len();
            let gps_nn = if in_range >= 10 {
                let p = gps_nn_baseline(&setup.index_star, &fix, 10)?;
                Some((p.x - frame.pose.x).hypot(p.y - frame.pose.y))
            } else {
                None
            };
            let regular = localize_with_model(
                config,
                &setup.index_regular,
                &artifacts.model_regular,
                artifacts.threshold_regular,
                frame,
                &fix,
                budget,
            )?;
            let star = localize_with_model(
                config,
                &setup.index_star,
                &artifacts.model_star,
                artifacts.threshold_star,
                frame,
                &fix,
                budget,
            )?;
            Ok((frame.frame_id, gps_nn, regular, star))
        })
        .collect::<Result<_>>()?;

    let gps_nn: Vec<Option<f64>> = rows.iter().map(|r| r.1).collect();
    let regular: Vec<Option<f64>> = rows.iter().map(|r| r.2).collect();
    let star: Vec<Option<f64>> = rows.iter().map(|r| r.3).collect();
    let reports = vec![
        (Method::GpsNn, accuracy_metrics(&gps_nn)?),
        (Method::VlGist, accuracy_metrics(&regular)?),
        (Method::VlGistStar, accuracy_metrics(&star)?),
    ];
    Ok(RetrievalExperimentResult {
        budget,
        reports,
        star_errors: rows.iter().map(|r| (r.0, r.3)).collect(),
    })
}
