//! Keyframe descriptor database with geo-restricted search.
//!
//! A query comes with a noisy GPS fix; only keyframes within the GPS error
//! budget and an aligned heading sector are ranked, by exact descriptor
//! distance (a 30-dim descriptor makes exhaustive ranking inside the
//! restricted set cheap; no approximate structure is needed). Neighbors
//! under the calibrated distance threshold vote for the position with
//! weights decreasing in descriptor distance; fewer than five such
//! neighbors means no fix. The confidence is the weighted covariance of
//! the neighbor positions.

use crate::embed::{Descriptor, EmbeddingModel};
use crate::error::{Error, Result};
use crate::geo::{heading_diff, GeoPose};
use crate::grid::GridIndex;
use crate::world::{FrameRecord, NoisyFix};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const INDEX_FORMAT_VERSION: u32 = 1;
const INDEX_MAGIC: &[u8; 4] = b"RLIX";

/// Fewest under-threshold neighbors required to emit a fix.
pub const MIN_NEIGHBORS: usize = 5;

#[derive(Debug, Clone)]
pub struct KeyframeEntry {
    pub frame_id: u64,
    pub ride_id: u64,
    pub descriptor: Descriptor,
    pub pose: GeoPose,
}

/// Immutable keyframe index: entries plus a spatial grid over positions.
pub struct KeyframeDB {
    entries: Vec<KeyframeEntry>,
    grid: GridIndex,
}

impl KeyframeDB {
    pub fn from_entries(entries: Vec<KeyframeEntry>) -> Self {
        let points = entries.iter().map(|e| (e.pose.x, e.pose.y)).collect();
        let grid = GridIndex::build(points, 10.0);
        Self { entries, grid }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KeyframeEntry] {
        &self.entries
    }

    /// Entry indices within `radius` of a point, ascending by index.
    pub fn within_radius(&self, center: (f64, f64), radius: f64) -> Vec<u32> {
        self.grid.within_radius(center, radius)
    }

    pub fn nearest_k(&self, center: (f64, f64), k: usize) -> Vec<u32> {
        self.grid.nearest_k(center, k)
    }
}

/// Build the index by embedding every frame. One entry per frame.
pub fn build_index(frames: &[FrameRecord], model: &EmbeddingModel) -> Result<KeyframeDB> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("keyframes"));
    }
    let entries: Vec<KeyframeEntry> = frames
        .par_iter()
        .map(|f| {
            Ok(KeyframeEntry {
                frame_id: f.frame_id,
                ride_id: f.ride_id,
                descriptor: model.embed(&f.raw_feature)?,
                pose: f.pose,
            })
        })
        .collect::<Result<_>>()?;
    Ok(KeyframeDB::from_entries(entries))
}

/// Retrieval tuning knobs.
#[derive(Debug, Clone)]
pub struct RetrievalParams {
    pub min_neighbors: usize,
    /// Heading alignment tolerance between query fix and keyframe, radians.
    pub heading_tolerance: f64,
    /// Use the raw ratio d_i / sum(d) as the weight (weights far neighbors
    /// more); kept as an ablation switch. The default inverts it so weights
    /// decrease with descriptor distance.
    pub literal_weights: bool,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            min_neighbors: MIN_NEIGHBORS,
            heading_tolerance: 20.0_f64.to_radians(),
            literal_weights: false,
        }
    }
}

/// Retrieval-predicted position with confidence.
#[derive(Debug, Clone)]
pub struct CoarseFix {
    pub position: Vector2<f64>,
    /// Weighted sample covariance of the neighbor positions (may be
    /// singular when neighbors coincide).
    pub confidence_cov: Matrix2<f64>,
    pub neighbor_count: usize,
    pub neighbor_ids: Vec<u64>,
}

impl CoarseFix {
    /// Covariance for use as a filter measurement: eigenvalues floored at
    /// (1 m)^2 so coincident neighbors cannot claim zero uncertainty.
    pub fn measurement_cov(&self) -> Matrix2<f64> {
        floor_covariance(&self.confidence_cov, 1.0)
    }
}

/// Raise the eigenvalues of a symmetric 2x2 matrix to at least `min_eig`.
pub fn floor_covariance(cov: &Matrix2<f64>, min_eig: f64) -> Matrix2<f64> {
    let a = cov[(0, 0)];
    let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let c = cov[(1, 1)];
    let mean = 0.5 * (a + c);
    let half_gap = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = mean + half_gap;
    let l2 = mean - half_gap;
    if l2 >= min_eig {
        return Matrix2::new(a, b, b, c);
    }
    // Eigenvector for l1; the other is its perpendicular.
    let (ux, uy) = if b.abs() > 1e-15 {
        let v = (b, l1 - a);
        let n = v.0.hypot(v.1);
        (v.0 / n, v.1 / n)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (vx, vy) = (-uy, ux);
    let l1c = l1.max(min_eig);
    let l2c = l2.max(min_eig);
    Matrix2::new(
        l1c * ux * ux + l2c * vx * vx,
        l1c * ux * uy + l2c * vx * vy,
        l1c * ux * uy + l2c * vx * vy,
        l1c * uy * uy + l2c * vy * vy,
    )
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Threshold from descriptor distances of validation pairs.
fn threshold_from_distances(mut distances: Vec<f64>) -> Result<f64> {
    if distances.len() < 100 {
        return Err(Error::NotEnoughPairs {
            have: distances.len(),
            need: 100,
        });
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&distances, 0.25);
    let q3 = quantile_sorted(&distances, 0.75);
    let fence = q3 + 1.5 * (q3 - q1);
    let kept: Vec<f64> = distances.into_iter().filter(|d| *d <= fence).collect();
    let t = quantile_sorted(&kept, 0.95);
    Ok(t.clamp(1e-9, 2.0 - 1e-9))
}

/// Calibrate the descriptor-distance threshold: collect the distances of
/// all validation pairs within 10 m geo-distance and aligned heading,
/// drop outliers above Q3 + 1.5 IQR, and take the 95th percentile.
pub fn calibrate_threshold(model: &EmbeddingModel, frames: &[FrameRecord]) -> Result<f64> {
    let descriptors: Vec<Descriptor> = frames
        .par_iter()
        .map(|f| model.embed(&f.raw_feature))
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = frames.iter().map(|f| (f.pose.x, f.pose.y)).collect();
    let grid = GridIndex::build(points, 10.0);
    let tol = 20.0_f64.to_radians();

    let mut distances = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        for j in grid.within_radius((f.pose.x, f.pose.y), 10.0) {
            let j = j as usize;
            if j <= i {
                continue;
            }
            let g = &frames[j];
            if heading_diff(f.pose.heading, g.pose.heading) <= tol {
                distances.push(descriptors[i].distance(&descriptors[j]));
            }
        }
    }
    threshold_from_distances(distances)
}

/// Coarse localization. Candidates are keyframes within `max_gps_error` of
/// the noisy fix with heading within the tolerance; those at descriptor
/// distance <= threshold vote. Returns `Ok(None)` (no-fix) when fewer than
/// `min_neighbors` pass — that is recall accounting, not an error.
pub fn coarse_localize(
    db: &KeyframeDB,
    query: &Descriptor,
    noisy_fix: &NoisyFix,
    max_gps_error: f64,
    threshold: f64,
    params: &RetrievalParams,
) -> Result<Option<CoarseFix>> {
    coarse_localize_filtered(db, query, noisy_fix, max_gps_error, threshold, params, None)
}

/// [`coarse_localize`] with an optional ride exclusion, used by experiments
/// to keep a query's own ride out of the candidate set.
pub fn coarse_localize_filtered(
    db: &KeyframeDB,
    query: &Descriptor,
    noisy_fix: &NoisyFix,
    max_gps_error: f64,
    threshold: f64,
    params: &RetrievalParams,
    exclude_ride: Option<u64>,
) -> Result<Option<CoarseFix>> {
    if !(max_gps_error > 0.0) {
        return Err(Error::InvalidWorld("max_gps_error must be > 0".into()));
    }
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::InvalidWorld("threshold must be in (0, 2)".into()));
    }
    let center = (noisy_fix.position.x, noisy_fix.position.y);
    let mut kept: Vec<(f64, u32)> = Vec::new();
    for idx in db.within_radius(center, max_gps_error) {
        let e = &db.entries[idx as usize];
        if let Some(r) = exclude_ride {
            if e.ride_id == r {
                continue;
            }
        }
        if heading_diff(e.pose.heading, noisy_fix.position.heading) > params.heading_tolerance {
            continue;
        }
        let d = query.distance(&e.descriptor);
        if d <= threshold {
            kept.push((d, idx));
        }
    }
    if kept.len() < params.min_neighbors {
        return Ok(None);
    }

    let weights = neighbor_weights(
        &kept.iter().map(|(d, _)| *d).collect::<Vec<_>>(),
        params.literal_weights,
    );
    let mut position = Vector2::zeros();
    for ((_, idx), w) in kept.iter().zip(&weights) {
        let e = &db.entries[*idx as usize];
        position += Vector2::new(e.pose.x, e.pose.y) * *w;
    }
    let mut cov = Matrix2::zeros();
    for ((_, idx), w) in kept.iter().zip(&weights) {
        let e = &db.entries[*idx as usize];
        let d = Vector2::new(e.pose.x, e.pose.y) - position;
        cov += d * d.transpose() * *w;
    }

    // Sort neighbor ids by (descriptor distance, id) for stable output.
    let mut order: Vec<(f64, u64)> = kept
        .iter()
        .map(|(d, idx)| (*d, db.entries[*idx as usize].frame_id))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    Ok(Some(CoarseFix {
        position,
        confidence_cov: cov,
        neighbor_count: kept.len(),
        neighbor_ids: order.into_iter().map(|(_, id)| id).collect(),
    }))
}

/// Voting weights over descriptor distances. The default form is
/// w_i = (1 - d_i / sum(d)) / (k - 1): a probability vector decreasing in
/// d_i. The literal form w_i = d_i / sum(d) is the ablation variant.
pub fn neighbor_weights(distances: &[f64], literal: bool) -> Vec<f64> {
    let k = distances.len();
    debug_assert!(k >= 2);
    let sum: f64 = distances.iter().sum();
    if sum <= 1e-12 {
        return vec![1.0 / k as f64; k];
    }
    if literal {
        distances.iter().map(|d| d / sum).collect()
    } else {
        distances
            .iter()
            .map(|d| (1.0 - d / sum) / (k as f64 - 1.0))
            .collect()
    }
}

/// Baseline: unweighted mean of the `k` geo-nearest keyframes to the noisy
/// fix (all of them when the index is smaller than `k`).
pub fn gps_nn_baseline(db: &KeyframeDB, noisy_fix: &NoisyFix, k: usize) -> Result<Vector2<f64>> {
    if db.is_empty() {
        return Err(Error::EmptyInput("keyframe db"));
    }
    let ids = db.nearest_k((noisy_fix.position.x, noisy_fix.position.y), k);
    let mut mean = Vector2::zeros();
    for idx in &ids {
        let e = &db.entries[*idx as usize];
        mean += Vector2::new(e.pose.x, e.pose.y);
    }
    Ok(mean / ids.len() as f64)
}

/// Persist the index: magic, version, descriptor dim, then fixed-width
/// little-endian entries. The grid is rebuilt on load.
pub fn save_index(db: &KeyframeDB, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
    let dim = db
        .entries
        .first()
        .map(|e| e.descriptor.dim())
        .unwrap_or(crate::embed::DESCRIPTOR_DIM);
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(db.entries.len() as u64).to_le_bytes())?;
    for e in &db.entries {
        w.write_all(&e.frame_id.to_le_bytes())?;
        w.write_all(&e.ride_id.to_le_bytes())?;
        for v in [e.pose.x, e.pose.y, e.pose.heading] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in e.descriptor.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<KeyframeDB> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Malformed {
            what: "index file",
            msg: "bad magic".into(),
        });
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != INDEX_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            what: "index file",
            got: version,
            supported: INDEX_FORMAT_VERSION,
        });
    }
    r.read_exact(&mut u32b)?;
    let dim = u32::from_le_bytes(u32b) as usize;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let count = u64::from_le_bytes(u64b) as usize;

    let mut f64b = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut f64b)?;
        Ok(f64::from_le_bytes(f64b))
    };
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64b)?;
        let frame_id = u64::from_le_bytes(u64b);
        r.read_exact(&mut u64b)?;
        let ride_id = u64::from_le_bytes(u64b);
        let x = read_f64(&mut r)?;
        let y = read_f64(&mut r)?;
        let heading = read_f64(&mut r)?;
        let mut desc = Vec::with_capacity(dim);
        for _ in 0..dim {
            desc.push(read_f64(&mut r)?);
        }
        entries.push(KeyframeEntry {
            frame_id,
            ride_id,
            descriptor: Descriptor::from_unit(desc),
            pose: GeoPose::new(x, y, heading),
        });
    }
    Ok(KeyframeDB::from_entries(entries))
}

/// Query results as CSV: one row per query.
pub fn write_query_results_csv(
    rows: &[(u64, Option<CoarseFix>)],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "query_id,yielded,x,y,cov_xx,cov_xy,cov_yy,neighbor_count"
    )?;
    for (id, fix) in rows {
        match fix {
            Some(f) => writeln!(
                w,
                "{},1,{},{},{},{},{},{}",
                id,
                f.position.x,
                f.position.y,
                f.confidence_cov[(0, 0)],
                f.confidence_cov[(0, 1)],
                f.confidence_cov[(1, 1)],
                f.neighbor_count
            )?,
            None => writeln!(w, "{id},0,,,,,,0")?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Descriptor;
    use approx::assert_relative_eq;

    fn fix_at(x: f64, y: f64, heading: f64) -> NoisyFix {
        NoisyFix {
            position: GeoPose::new(x, y, heading),
            reported_accuracy: 5.0,
            true_error: 0.0,
        }
    }

    fn unit_desc(seed: u64) -> Descriptor {
        let mut rng = crate::rng::rng_for(seed, "desc");
        use rand::Rng;
        let mut v: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Descriptor::from_unit(v)
    }

    fn entry(id: u64, ride: u64, x: f64, y: f64, desc: Descriptor) -> KeyframeEntry {
        KeyframeEntry {
            frame_id: id,
            ride_id: ride,
            descriptor: desc,
            pose: GeoPose::new(x, y, 0.0),
        }
    }

    #[test]
    fn identical_neighbors_give_exact_fix_with_zero_covariance() {
        let q = unit_desc(1);
        let entries: Vec<KeyframeEntry> = (0..5)
            .map(|i| entry(i, i, 50.0, 60.0, q.clone()))
            .collect();
        let db = KeyframeDB::from_entries(entries);
        let fix = coarse_localize(
            &db,
            &q,
            &fix_at(52.0, 61.0, 0.0),
            30.0,
            0.5,
            &RetrievalParams::default(),
        )
        .unwrap()
        .expect("should yield a fix");
        assert_relative_eq!(fix.position.x, 50.0, epsilon = 1e-12);
        assert_relative_eq!(fix.position.y, 60.0, epsilon = 1e-12);
        assert_relative_eq!(fix.confidence_cov.norm(), 0.0, epsilon = 1e-12);
        // The measurement covariance is floored for the filter.
        assert_relative_eq!(fix.measurement_cov()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(fix.neighbor_count, 5);
    }

    #[test]
    fn four_neighbors_is_no_fix() {
        let q = unit_desc(2);
        let entries: Vec<KeyframeEntry> =
            (0..4).map(|i| entry(i, i, 10.0, 10.0, q.clone())).collect();
        let db = KeyframeDB::from_entries(entries);
        let out = coarse_localize(
            &db,
            &q,
            &fix_at(10.0, 10.0, 0.0),
            30.0,
            0.5,
            &RetrievalParams::default(),
        )
        .unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn equal_distances_give_uniform_weights_and_centroid() {
        let w = neighbor_weights(&[0.3; 5], false);
        for wi in &w {
            assert_relative_eq!(*wi, 0.2, epsilon = 1e-12);
        }
        // Weight vector always sums to one and decreases with distance.
        let w = neighbor_weights(&[0.1, 0.2, 0.3, 0.2, 0.2], false);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w[0] > w[1]);
        assert!(w[1] > w[2]);
        assert!(w.iter().all(|x| *x >= 0.0));
        // Literal variant increases with distance (the ablation).
        let lw = neighbor_weights(&[0.1, 0.3], true);
        assert!(lw[1] > lw[0]);
        assert_relative_eq!(lw.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn raising_threshold_never_loses_a_fix() {
        let mut entries = Vec::new();
        let q = unit_desc(3);
        for i in 0..12u64 {
            let mut d = q.as_slice().to_vec();
            d[0] += i as f64 * 0.05;
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x /= n);
            entries.push(entry(i, i, 20.0 + i as f64, 20.0, Descriptor::from_unit(d)));
        }
        let db = KeyframeDB::from_entries(entries);
        let fix = fix_at(24.0, 20.0, 0.0);
        let params = RetrievalParams::default();
        let mut prev_yielded = false;
        for threshold in [0.05, 0.1, 0.2, 0.4, 0.8, 1.5] {
            let out = coarse_localize(&db, &q, &fix, 50.0, threshold, &params).unwrap();
            if prev_yielded {
                assert!(out.is_some(), "fix lost at threshold {threshold}");
            }
            prev_yielded = out.is_some();
        }
    }

    #[test]
    fn fix_position_stays_in_neighbor_bounding_box() {
        let q = unit_desc(4);
        let mut entries = Vec::new();
        for i in 0..8u64 {
            let mut d = q.as_slice().to_vec();
            d[1] += i as f64 * 0.02;
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x /= n);
            entries.push(entry(
                i,
                i,
                30.0 + (i % 3) as f64 * 4.0,
                40.0 + (i % 4) as f64 * 3.0,
                Descriptor::from_unit(d),
            ));
        }
        let db = KeyframeDB::from_entries(entries);
        let fix = coarse_localize(
            &db,
            &q,
            &fix_at(33.0, 44.0, 0.0),
            60.0,
            1.0,
            &RetrievalParams::default(),
        )
        .unwrap()
        .unwrap();
        let xs: Vec<f64> = db.entries().iter().map(|e| e.pose.x).collect();
        let ys: Vec<f64> = db.entries().iter().map(|e| e.pose.y).collect();
        let (xmin, xmax) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (ymin, ymax) = (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        assert!(fix.position.x >= xmin && fix.position.x <= xmax);
        assert!(fix.position.y >= ymin && fix.position.y <= ymax);
    }

    #[test]
    fn threshold_calibration_examples() {
        // All distances identical: the threshold is that constant.
        let d = vec![0.25; 150];
        assert_relative_eq!(
            threshold_from_distances(d).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        // A single far outlier is fenced off before the percentile.
        let mut d = vec![0.1; 99];
        d.push(1.9);
        assert_relative_eq!(threshold_from_distances(d).unwrap(), 0.1, epsilon = 1e-12);
        // Too few pairs is an error.
        assert!(threshold_from_distances(vec![0.1; 99]).is_err());
    }

    #[test]
    fn gps_nn_handles_small_db_and_matches_brute_force() {
        let q = unit_desc(5);
        let entries: Vec<KeyframeEntry> = (0..10)
            .map(|i| entry(i, i, 5.0, 5.0, q.clone()))
            .collect();
        let db = KeyframeDB::from_entries(entries);
        let p = gps_nn_baseline(&db, &fix_at(0.0, 0.0, 0.0), 10).unwrap();
        assert_relative_eq!(p.x, 5.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 5.0, epsilon = 1e-12);

        // Oracle equivalence on a scattered db.
        let mut rng = crate::rng::rng_for(6, "nn");
        use rand::Rng;
        let entries: Vec<KeyframeEntry> = (0..200)
            .map(|i| {
                entry(
                    i,
                    i,
                    rng.random_range(0.0..300.0),
                    rng.random_range(0.0..300.0),
                    unit_desc(100 + i),
                )
            })
            .collect();
        let db = KeyframeDB::from_entries(entries);
        for probe in 0..20 {
            let fx = rng.random_range(0.0..300.0);
            let fy = rng.random_range(0.0..300.0);
            let fix = fix_at(fx, fy, 0.0);
            let fast = gps_nn_baseline(&db, &fix, 10).unwrap();
            let mut order: Vec<usize> = (0..db.len()).collect();
            order.sort_by(|&a, &b| {
                let da = (db.entries()[a].pose.x - fx).hypot(db.entries()[a].pose.y - fy);
                let dbd = (db.entries()[b].pose.x - fx).hypot(db.entries()[b].pose.y - fy);
                da.partial_cmp(&dbd).unwrap().then(a.cmp(&b))
            });
            let mut slow = Vector2::zeros();
            for &i in order.iter().take(10) {
                slow += Vector2::new(db.entries()[i].pose.x, db.entries()[i].pose.y);
            }
            slow /= 10.0;
            assert_relative_eq!(fast.x, slow.x, epsilon = 1e-9);
            assert_relative_eq!(fast.y, slow.y, epsilon = 1e-9, max_relative = 1e-9);
            let _ = probe;
        }
    }

    #[test]
    fn covariance_floor_preserves_large_eigenvalues() {
        let cov = Matrix2::new(9.0, 2.0, 2.0, 5.0);
        let floored = floor_covariance(&cov, 1.0);
        assert_relative_eq!(floored, cov, epsilon = 1e-12);
        let tiny = Matrix2::new(0.01, 0.0, 0.0, 25.0);
        let floored = floor_covariance(&tiny, 1.0);
        assert_relative_eq!(floored[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(floored[(1, 1)], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn index_round_trip() {
        let entries: Vec<KeyframeEntry> = (0..20)
            .map(|i| entry(i, i % 3, i as f64 * 7.0, 3.0, unit_desc(i)))
            .collect();
        let db = KeyframeDB::from_entries(entries);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        save_index(&db, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.len(), db.len());
        for (a, b) in db.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.frame_id, b.frame_id);
            assert_eq!(a.ride_id, b.ride_id);
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.descriptor, b.descriptor);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let q = unit_desc(7);
        let db = KeyframeDB::from_entries(vec![entry(0, 0, 0.0, 0.0, q.clone())]);
        let fix = fix_at(0.0, 0.0, 0.0);
        let params = RetrievalParams::default();
        assert!(coarse_localize(&db, &q, &fix, 0.0, 0.5, &params).is_err());
        assert!(coarse_localize(&db, &q, &fix, 10.0, -1.0, &params).is_err());
    }
}
