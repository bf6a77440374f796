//! Triplet generators over a frame database.
//!
//! Three generators feed training:
//! - regular: positive within 10 m and 20 degrees of the anchor, negative
//!   more than 500 m away, all three frames from distinct rides;
//! - hard negative: like regular but the negative sits in the 20-30 m ring
//!   around the anchor with aligned heading;
//! - video: all three frames from one ride, positive the nearest-in-space
//!   frame under 10 m, negative the nearest whose distance is in 25-50 m.
//!
//! The mixer draws a generator uniformly per sample. Every emitted triplet
//! satisfies its tag's constraints by construction ([`verify_triplet`]
//! re-checks them, and the acceptance suite sweeps 10^4 samples).

use crate::embed::{Triplet, TripletKind, TripletSource};
use crate::error::Result;
use crate::geo::heading_diff;
use crate::grid::GridIndex;
use crate::world::FrameRecord;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Geometric constraints shared by the generators (meters / radians).
pub const POSITIVE_MAX_DIST: f64 = 10.0;
pub const NEGATIVE_MIN_DIST: f64 = 500.0;
pub const HARD_NEGATIVE_RING: (f64, f64) = (20.0, 30.0);
pub const VIDEO_NEGATIVE_RING: (f64, f64) = (25.0, 50.0);
/// "Roughly the same orientation": the one tolerance used everywhere.
pub const HEADING_TOLERANCE: f64 = 20.0 * std::f64::consts::PI / 180.0;

/// Attempts per sample before reporting no-sample.
pub const MAX_ATTEMPTS: usize = 64;
/// Random candidate draws per negative search within one attempt.
const NEGATIVE_DRAWS: usize = 32;

/// Frame database: spatial grid over positions (10 m cells) plus per-ride
/// frame lists sorted by time. Immutable after build.
pub struct FrameDB {
    frames: Vec<FrameRecord>,
    grid: GridIndex,
    rides: BTreeMap<u64, Vec<u32>>,
}

impl FrameDB {
    pub fn build(frames: Vec<FrameRecord>) -> Self {
        let points: Vec<(f64, f64)> = frames.iter().map(|f| (f.pose.x, f.pose.y)).collect();
        let grid = GridIndex::build(points, 10.0);
        let mut rides: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
        for (i, f) in frames.iter().enumerate() {
            rides.entry(f.ride_id).or_default().push(i as u32);
        }
        for list in rides.values_mut() {
            list.sort_by(|&a, &b| {
                frames[a as usize]
                    .t
                    .partial_cmp(&frames[b as usize].t)
                    .unwrap()
                    .then(a.cmp(&b))
            });
        }
        Self {
            frames,
            grid,
            rides,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn frame(&self, idx: u32) -> &FrameRecord {
        &self.frames[idx as usize]
    }

    /// Indices of frames within `radius` of the point, ascending by index.
    pub fn within_radius(&self, center: (f64, f64), radius: f64) -> Vec<u32> {
        self.grid.within_radius(center, radius)
    }

    pub fn ride_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.rides.keys().copied()
    }

    pub fn ride_frames(&self, ride_id: u64) -> &[u32] {
        self.rides
            .get(&ride_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }
}

fn pick<'a, T>(items: &'a [T], rng: &mut ChaCha12Rng) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[rng.random_range(0..items.len())])
    }
}

fn aligned(a: &FrameRecord, b: &FrameRecord) -> bool {
    heading_diff(a.pose.heading, b.pose.heading) <= HEADING_TOLERANCE
}

fn geo_dist(a: &FrameRecord, b: &FrameRecord) -> f64 {
    a.pose.distance_to(&b.pose)
}

/// Anchor plus nearby aligned positive from a different ride.
fn sample_anchor_positive(db: &FrameDB, rng: &mut ChaCha12Rng) -> Option<(u32, u32)> {
    let anchor_idx = rng.random_range(0..db.len() as u32);
    let anchor = db.frame(anchor_idx);
    let candidates: Vec<u32> = db
        .within_radius((anchor.pose.x, anchor.pose.y), POSITIVE_MAX_DIST)
        .into_iter()
        .filter(|&i| {
            let f = db.frame(i);
            i != anchor_idx && f.ride_id != anchor.ride_id && aligned(anchor, f)
        })
        .collect();
    let positive_idx = *pick(&candidates, rng)?;
    Some((anchor_idx, positive_idx))
}

/// Regular generator: far negative (> 500 m), three distinct rides.
pub fn sample_regular(db: &FrameDB, rng: &mut ChaCha12Rng) -> Option<Triplet> {
    if db.is_empty() {
        return None;
    }
    for _ in 0..MAX_ATTEMPTS {
        let Some((ai, pi)) = sample_anchor_positive(db, rng) else {
            continue;
        };
        let anchor = db.frame(ai);
        let positive = db.frame(pi);
        for _ in 0..NEGATIVE_DRAWS {
            let ni = rng.random_range(0..db.len() as u32);
            let negative = db.frame(ni);
            if negative.ride_id != anchor.ride_id
                && negative.ride_id != positive.ride_id
                && geo_dist(anchor, negative) > NEGATIVE_MIN_DIST
            {
                return Some(Triplet {
                    anchor: anchor.clone(),
                    positive: positive.clone(),
                    negative: negative.clone(),
                    source: TripletKind::Regular,
                });
            }
        }
    }
    None
}

/// Hard-negative generator: negative in the 20-30 m ring, aligned heading,
/// three distinct rides.
pub fn sample_hard_negative(db: &FrameDB, rng: &mut ChaCha12Rng) -> Option<Triplet> {
    if db.is_empty() {
        return None;
    }
    let (lo, hi) = HARD_NEGATIVE_RING;
    for _ in 0..MAX_ATTEMPTS {
        let Some((ai, pi)) = sample_anchor_positive(db, rng) else {
            continue;
        };
        let anchor = db.frame(ai);
        let positive = db.frame(pi);
        let ring: Vec<u32> = db
            .within_radius((anchor.pose.x, anchor.pose.y), hi)
            .into_iter()
            .filter(|&i| {
                let f = db.frame(i);
                let d = geo_dist(anchor, f);
                d >= lo
                    && d <= hi
                    && f.ride_id != anchor.ride_id
                    && f.ride_id != positive.ride_id
                    && aligned(anchor, f)
            })
            .collect();
        if let Some(&ni) = pick(&ring, rng) {
            return Some(Triplet {
                anchor: anchor.clone(),
                positive: positive.clone(),
                negative: db.frame(ni).clone(),
                source: TripletKind::HardNegative,
            });
        }
    }
    None
}

/// Video generator: one ride supplies all three frames. The positive is the
/// nearest-in-space frame under 10 m, the negative the nearest-in-space
/// frame whose distance falls in 25-50 m; both must be heading-aligned with
/// the anchor.
pub fn sample_video(db: &FrameDB, rng: &mut ChaCha12Rng) -> Option<Triplet> {
    if db.is_empty() {
        return None;
    }
    let ride_ids: Vec<u64> = db.ride_ids().collect();
    let (lo, hi) = VIDEO_NEGATIVE_RING;
    for _ in 0..MAX_ATTEMPTS {
        let ride = *pick(&ride_ids, rng)?;
        let members = db.ride_frames(ride);
        if members.len() < 3 {
            continue;
        }
        let ai = members[rng.random_range(0..members.len())];
        let anchor = db.frame(ai);

        let mut best_pos: Option<(f64, u32)> = None;
        let mut best_neg: Option<(f64, u32)> = None;
        for &i in members {
            if i == ai {
                continue;
            }
            let d = geo_dist(anchor, db.frame(i));
            if d < POSITIVE_MAX_DIST && best_pos.is_none_or(|(bd, _)| d < bd) {
                best_pos = Some((d, i));
            }
            if (lo..=hi).contains(&d) && best_neg.is_none_or(|(bd, _)| d < bd) {
                best_neg = Some((d, i));
            }
        }
        let (Some((_, pi)), Some((_, ni))) = (best_pos, best_neg) else {
            continue;
        };
        let positive = db.frame(pi);
        let negative = db.frame(ni);
        if aligned(anchor, positive) && aligned(anchor, negative) {
            return Some(Triplet {
                anchor: anchor.clone(),
                positive: positive.clone(),
                negative: negative.clone(),
                source: TripletKind::Video,
            });
        }
    }
    None
}

/// Uniform mix over the three generators; a failed generator draw is
/// redrawn (bounded), and the tag records which generator produced the
/// triplet.
pub fn sample_mixed(db: &FrameDB, rng: &mut ChaCha12Rng) -> Option<Triplet> {
    for _ in 0..12 {
        let triplet = match rng.random_range(0..3) {
            0 => sample_regular(db, rng),
            1 => sample_hard_negative(db, rng),
            _ => sample_video(db, rng),
        };
        if triplet.is_some() {
            return triplet;
        }
    }
    None
}

/// Check a triplet against its tag's constraints. Used by tests and the
/// acceptance sweep.
pub fn verify_triplet(t: &Triplet) -> bool {
    let d_pos = geo_dist(&t.anchor, &t.positive);
    let d_neg = geo_dist(&t.anchor, &t.negative);
    let pos_ok = d_pos <= POSITIVE_MAX_DIST && aligned(&t.anchor, &t.positive);
    match t.source {
        TripletKind::Regular => {
            pos_ok
                && d_neg > NEGATIVE_MIN_DIST
                && distinct_rides(&[&t.anchor, &t.positive, &t.negative])
        }
        TripletKind::HardNegative => {
            pos_ok
                && (HARD_NEGATIVE_RING.0..=HARD_NEGATIVE_RING.1).contains(&d_neg)
                && aligned(&t.anchor, &t.negative)
                && distinct_rides(&[&t.anchor, &t.positive, &t.negative])
        }
        TripletKind::Video => {
            pos_ok
                && (VIDEO_NEGATIVE_RING.0..=VIDEO_NEGATIVE_RING.1).contains(&d_neg)
                && aligned(&t.anchor, &t.negative)
                && t.anchor.ride_id == t.positive.ride_id
                && t.anchor.ride_id == t.negative.ride_id
        }
    }
}

fn distinct_rides(frames: &[&FrameRecord]) -> bool {
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            if frames[i].ride_id == frames[j].ride_id {
                return false;
            }
        }
    }
    true
}

/// Sampler choice for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMix {
    /// Regular triplets only.
    Regular,
    /// Uniform mix of all three generators.
    All,
}

/// [`TripletSource`] over a frame database.
pub struct DbTripletSource<'a> {
    db: &'a FrameDB,
    mix: SamplerMix,
}

impl<'a> DbTripletSource<'a> {
    pub fn new(db: &'a FrameDB, mix: SamplerMix) -> Self {
        Self { db, mix }
    }
}

impl TripletSource for DbTripletSource<'_> {
    fn sample(&self, rng: &mut ChaCha12Rng) -> Option<Triplet> {
        match self.mix {
            SamplerMix::Regular => sample_regular(self.db, rng),
            SamplerMix::All => sample_mixed(self.db, rng),
        }
    }
}

/// Export triplets as an id-triples CSV for reproducibility audits.
pub fn write_triplets_csv(triplets: &[Triplet], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "anchor_id,positive_id,negative_id,source")?;
    for t in triplets {
        writeln!(
            w,
            "{},{},{},{}",
            t.anchor.frame_id,
            t.positive.frame_id,
            t.negative.frame_id,
            t.source.label()
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPose;
    use crate::rng::rng_for;

    /// Synthetic db: straight-line rides along a 1200 m road, frames 1 m
    /// apart, heading east.
    fn line_db(n_rides: usize, frames_per_ride: usize) -> FrameDB {
        let mut frames = Vec::new();
        for ride in 0..n_rides {
            for k in 0..frames_per_ride {
                frames.push(FrameRecord {
                    frame_id: (ride * 1_000_000 + k) as u64,
                    ride_id: ride as u64,
                    t: k as f64 * 0.1,
                    pose: GeoPose::new(k as f64 + ride as f64 * 0.1, ride as f64 * 0.5, 0.0),
                    raw_feature: vec![0.0; 4],
                    nuisance_seed: 0,
                });
            }
        }
        FrameDB::build(frames)
    }

    #[test]
    fn regular_samples_satisfy_constraints() {
        let db = line_db(6, 600);
        let mut rng = rng_for(1, "reg");
        let mut produced = 0;
        for _ in 0..500 {
            if let Some(t) = sample_regular(&db, &mut rng) {
                produced += 1;
                assert!(verify_triplet(&t), "constraint violation: {t:?}");
                assert_eq!(t.source, TripletKind::Regular);
            }
        }
        assert!(produced > 400, "only {produced} regular samples");
    }

    #[test]
    fn regular_fails_on_small_extent() {
        // All frames within < 500 m: the far-negative constraint is
        // unsatisfiable.
        let db = line_db(4, 300);
        let mut rng = rng_for(2, "reg-small");
        assert!(sample_regular(&db, &mut rng).is_none());
    }

    #[test]
    fn hard_negative_samples_stay_in_ring() {
        let db = line_db(6, 600);
        let mut rng = rng_for(3, "hard");
        let mut produced = 0;
        for _ in 0..500 {
            if let Some(t) = sample_hard_negative(&db, &mut rng) {
                produced += 1;
                assert!(verify_triplet(&t));
                let d = t.anchor.pose.distance_to(&t.negative.pose);
                assert!((20.0..=30.0).contains(&d));
            }
        }
        assert!(produced > 400);
    }

    #[test]
    fn video_samples_share_one_ride() {
        let db = line_db(4, 400);
        let mut rng = rng_for(4, "video");
        for _ in 0..300 {
            let t = sample_video(&db, &mut rng).expect("video sampler should succeed");
            assert!(verify_triplet(&t));
            assert_eq!(t.anchor.ride_id, t.positive.ride_id);
            assert_eq!(t.anchor.ride_id, t.negative.ride_id);
        }
    }

    #[test]
    fn video_positive_is_adjacent_frame_on_straight_ride() {
        // 1 m frame spacing: the nearest-in-space frame is adjacent in time.
        let db = line_db(3, 200);
        let mut rng = rng_for(5, "video-adj");
        for _ in 0..100 {
            let t = sample_video(&db, &mut rng).unwrap();
            let dt = (t.anchor.t - t.positive.t).abs();
            assert!(
                (dt - 0.1).abs() < 1e-9,
                "positive not adjacent in time: dt={dt}"
            );
        }
    }

    #[test]
    fn video_fails_on_short_ride() {
        // Rides shorter than 25 m of travel have no valid negative.
        let db = line_db(3, 20);
        let mut rng = rng_for(6, "video-short");
        assert!(sample_video(&db, &mut rng).is_none());
    }

    #[test]
    fn mixer_is_roughly_uniform() {
        let db = line_db(6, 600);
        let mut rng = rng_for(7, "mix");
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            let t = sample_mixed(&db, &mut rng).expect("mixed sample");
            *counts.entry(t.source).or_insert(0usize) += 1;
        }
        for kind in [
            TripletKind::Regular,
            TripletKind::HardNegative,
            TripletKind::Video,
        ] {
            let frac = counts[&kind] as f64 / n as f64;
            assert!(
                (0.30..=0.37).contains(&frac),
                "{} frequency {frac}",
                kind.label()
            );
        }
    }

    #[test]
    fn mixer_falls_back_when_video_fails() {
        // Single-frame rides: video sampler can never fire.
        let mut frames = Vec::new();
        for ride in 0..800u64 {
            frames.push(FrameRecord {
                frame_id: ride,
                ride_id: ride,
                t: 0.0,
                pose: GeoPose::new((ride as f64) * 1.5, 0.0, 0.0),
                raw_feature: vec![0.0; 4],
                nuisance_seed: 0,
            });
        }
        let db = FrameDB::build(frames);
        let mut rng = rng_for(8, "mix-fallback");
        for _ in 0..200 {
            if let Some(t) = sample_mixed(&db, &mut rng) {
                assert_ne!(t.source, TripletKind::Video);
            }
        }
    }

    #[test]
    fn mixer_is_deterministic() {
        let db = line_db(5, 500);
        let collect = |seed: u64| -> Vec<(u64, u64, u64)> {
            let mut rng = rng_for(seed, "det");
            (0..50)
                .filter_map(|_| sample_mixed(&db, &mut rng))
                .map(|t| (t.anchor.frame_id, t.positive.frame_id, t.negative.frame_id))
                .collect()
        };
        assert_eq!(collect(42), collect(42));
    }

    #[test]
    fn grid_queries_match_brute_force_on_db() {
        let db = line_db(5, 500);
        let mut rng = rng_for(9, "oracle");
        for _ in 0..50 {
            let center = (rng.random_range(-10.0..510.0), rng.random_range(-5.0..10.0));
            let radius = rng.random_range(0.0..60.0);
            let fast = db.within_radius(center, radius);
            let mut slow: Vec<u32> = db
                .frames()
                .iter()
                .enumerate()
                .filter(|(_, f)| (f.pose.x - center.0).hypot(f.pose.y - center.1) <= radius)
                .map(|(i, _)| i as u32)
                .collect();
            slow.sort_unstable();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn triplet_csv_export() {
        let db = line_db(6, 600);
        let mut rng = rng_for(10, "csv");
        let triplets: Vec<Triplet> = (0..20)
            .filter_map(|_| sample_mixed(&db, &mut rng))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triplets.csv");
        write_triplets_csv(&triplets, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("anchor_id,positive_id,negative_id,source\n"));
        assert_eq!(text.lines().count(), triplets.len() + 1);
    }
}
