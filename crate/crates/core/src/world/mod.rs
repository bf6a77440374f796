//! Deterministic synthetic driving world.
//!
//! The world is a rectangle carved into `cell_size` (default 10 m) square
//! cells with a connected graph of drivable roads. Every cell a road passes
//! through carries one unit-norm scene-signature vector per 20-degree heading
//! sector; a frame "image" rendered at a pose is the distance-blend of the
//! signatures around it plus a nuisance component (weather, lighting, dynamic
//! objects) drawn from the frame's nuisance seed. Two frames at the same pose
//! with different nuisance seeds therefore agree exactly on the signature
//! block and are uncorrelated on the nuisance block — the invariance the
//! descriptor model has to learn.

mod gps;
mod io;
mod ride;

pub use gps::{advance_canyon, gps_noise, CanyonState, GpsNoiseModel, GpsSimulator, NoisyFix};
pub use io::{load_world, read_frames, save_world, write_frames, FRAMES_FORMAT_VERSION};
pub use ride::{simulate_path, simulate_ride};

use crate::error::{Error, Result};
use crate::geo::{normalize_angle, point_segment_distance, GeoPose};
use crate::rng::rng_for_indexed;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::f64::consts::TAU;

/// Heading sectors are 20 degrees wide, centered on the cardinal directions
/// so grid-road headings sit at sector centers rather than on boundaries.
pub const NUM_SECTORS: usize = 18;
pub const SECTOR_WIDTH: f64 = TAU / NUM_SECTORS as f64;

/// Sector index of a heading, `0..NUM_SECTORS`.
pub fn sector_of(heading: f64) -> u8 {
    let shifted = normalize_angle(heading) + SECTOR_WIDTH / 2.0;
    ((shifted / SECTOR_WIDTH).floor() as usize % NUM_SECTORS) as u8
}

/// Road layout specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RoadLayout {
    /// Axis-aligned street grid with the given spacing between parallel
    /// roads. Roads are inset half a spacing from the boundary and span
    /// between the first and last crossing, so every intersection has
    /// degree >= 2 and rides never dead-end.
    Grid { spacing: f64 },
    /// Explicit polylines (each a sequence of (x, y) vertices). A single
    /// one-point polyline yields a world with signed cells but no drivable
    /// edges.
    Polylines(Vec<Vec<(f64, f64)>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Extent in meters: (width east, height north).
    pub width: f64,
    pub height: f64,
    /// Square cell side, meters.
    pub cell_size: f64,
    /// Scene-signature dimension (the place-identity part of a feature).
    pub scene_dim: usize,
    /// Dimensions of the scene block carrying the street-level identity:
    /// one signature per road block (intersection-to-intersection edge)
    /// and heading sector, shared by every cell on that block. Real
    /// streets keep looking like themselves for a whole block, which is
    /// exactly what makes 20-30 m hard negatives hard.
    pub street_dim: usize,
    /// Fraction of scene energy carried by the street sub-block.
    pub street_energy: f64,
    /// Gaussian scale (meters) for mixing the street identities of nearby
    /// road blocks into a cell, so the street character turns over
    /// smoothly at intersections instead of jumping.
    pub street_blend_scale: f64,
    /// Lower bound of the per-block distinctiveness factor in [0, 1].
    /// Each road block draws a factor from [min, 1]: distinctive blocks
    /// put their scene energy into per-cell local detail, featureless
    /// ones lean almost entirely on the shared street identity — those
    /// stretches are where nearby places get confused.
    pub distinctiveness_min: f64,
    /// Nuisance dimension (the part the descriptor must ignore).
    pub nuisance_dim: usize,
    pub roads: RoadLayout,
    /// Gaussian blend kernel scale, meters: neighbor cell signatures are
    /// weighted by exp(-(d / blend_scale)^2). The scale sets how fast scene
    /// similarity decays with distance: ~0.99 correlation at 2 m, ~0.2 at
    /// 25 m, ~0 beyond 50 m for the default.
    pub blend_scale: f64,
    /// Kernel truncation radius, meters.
    pub blend_radius: f64,
    /// Angular blend scale, radians: sector signatures are mixed with
    /// weight exp(-(angle_to_sector_center / heading_blend_scale)^2), so
    /// the scene varies smoothly with heading the way overlapping camera
    /// views do (~0.7 correlation at 20 degrees, ~0 at 90).
    pub heading_blend_scale: f64,
    /// L2 norm of the nuisance component.
    pub nuisance_strength: f64,
    /// Sigma of the small isotropic noise added to the nuisance block.
    pub feature_noise: f64,
    /// Frames per nuisance window: within a ride the nuisance seed is
    /// redrawn every this many frames (weather changes slowly).
    pub nuisance_window: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 1600.0,
            height: 1250.0,
            cell_size: 10.0,
            scene_dim: 96,
            street_dim: 32,
            street_energy: 0.65,
            street_blend_scale: 15.0,
            distinctiveness_min: 0.2,
            nuisance_dim: 32,
            roads: RoadLayout::Grid { spacing: 110.0 },
            blend_scale: 14.0,
            blend_radius: 40.0,
            heading_blend_scale: 24.0_f64.to_radians(),
            nuisance_strength: 1.0,
            feature_noise: 0.02,
            nuisance_window: 50,
        }
    }
}

impl WorldConfig {
    /// Raw feature dimension: scene block followed by nuisance block.
    pub fn raw_dim(&self) -> usize {
        self.scene_dim + self.nuisance_dim
    }
}

/// A simulated "image": raw feature vector plus ground-truth pose and the
/// ride/video identity used by the triplet samplers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub ride_id: u64,
    /// Seconds since ride start; strictly increasing within a ride.
    pub t: f64,
    pub pose: GeoPose,
    pub raw_feature: Vec<f64>,
    pub nuisance_seed: u64,
}

/// Road-graph node/edge view used by the ride simulator.
#[derive(Debug, Clone)]
pub(crate) struct RoadGraph {
    pub nodes: Vec<(f64, f64)>,
    pub adjacency: Vec<Vec<u32>>,
    /// Edges as (min node, max node), in deterministic order. Each edge is
    /// one road block.
    pub edges: Vec<(u32, u32)>,
}

impl RoadGraph {
    pub fn has_edges(&self) -> bool {
        self.adjacency.iter().any(|n| !n.is_empty())
    }
}

/// Immutable world: safe to share across threads after generation.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    seed: u64,
    polylines: Vec<Vec<(f64, f64)>>,
    graph: RoadGraph,
    signed: BTreeSet<(i64, i64)>,
    signatures: HashMap<(i64, i64, u8), Vec<f64>>,
}

impl World {
    /// Generate a world. Deterministic: the same (config, seed) yields a
    /// bit-identical world.
    pub fn generate(config: WorldConfig, seed: u64) -> Result<Self> {
        if !(config.width > 0.0) || !(config.height > 0.0) {
            return Err(Error::InvalidWorld(format!(
                "extent must be positive, got {} x {}",
                config.width, config.height
            )));
        }
        if !(config.cell_size > 0.0) {
            return Err(Error::InvalidWorld("cell_size must be positive".into()));
        }
        if config.scene_dim == 0 || config.nuisance_dim == 0 {
            return Err(Error::InvalidWorld("feature dims must be positive".into()));
        }
        if config.street_dim >= config.scene_dim {
            return Err(Error::InvalidWorld(
                "street_dim must be smaller than scene_dim".into(),
            ));
        }
        if !(0.0..1.0).contains(&config.street_energy) {
            return Err(Error::InvalidWorld(
                "street_energy must be in [0, 1)".into(),
            ));
        }

        let polylines = build_polylines(&config)?;
        if polylines.iter().all(|p| p.is_empty()) {
            return Err(Error::InvalidWorld("empty road graph".into()));
        }
        for line in &polylines {
            for &(x, y) in line {
                if x < 0.0 || x > config.width || y < 0.0 || y > config.height {
                    return Err(Error::InvalidWorld(format!(
                        "road point ({x}, {y}) outside extent"
                    )));
                }
            }
        }

        let graph = build_graph(&polylines);
        check_connected(&graph)?;

        let signed = mark_signed_cells(&polylines, &config);
        if signed.is_empty() {
            return Err(Error::InvalidWorld("no cell intersects a road".into()));
        }

        // Precompute one unit-norm signature per (signed cell, sector):
        // a per-cell local part plus the street parts of the road blocks
        // around it, mixed by distance.
        let mut signatures = HashMap::with_capacity(signed.len() * NUM_SECTORS);
        for &(cx, cy) in &signed {
            let mix = street_mix(&config, &graph, (cx, cy));
            for sector in 0..NUM_SECTORS as u8 {
                let sig = cell_signature(&config, seed, cx, cy, &mix, sector);
                signatures.insert((cx, cy, sector), sig);
            }
        }

        Ok(Self {
            config,
            seed,
            polylines,
            graph,
            signed,
            signatures,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cell grid dimensions: (ceil(width/cell), ceil(height/cell)).
    pub fn grid_dims(&self) -> (usize, usize) {
        (
            (self.config.width / self.config.cell_size).ceil() as usize,
            (self.config.height / self.config.cell_size).ceil() as usize,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.config.cell_size).floor() as i64,
            (y / self.config.cell_size).floor() as i64,
        )
    }

    pub fn cell_center(&self, cell: (i64, i64)) -> (f64, f64) {
        (
            (cell.0 as f64 + 0.5) * self.config.cell_size,
            (cell.1 as f64 + 0.5) * self.config.cell_size,
        )
    }

    /// Cells that intersect a road (and therefore carry signatures).
    pub fn signed_cells(&self) -> &BTreeSet<(i64, i64)> {
        &self.signed
    }

    pub fn polylines(&self) -> &[Vec<(f64, f64)>] {
        &self.polylines
    }

    pub(crate) fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    /// Scene signature for a signed cell and sector; `None` off-road.
    pub fn signature(&self, cell: (i64, i64), sector: u8) -> Option<&[f64]> {
        self.signatures
            .get(&(cell.0, cell.1, sector))
            .map(|v| v.as_slice())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x <= self.config.width && y >= 0.0 && y <= self.config.height
    }

    /// Distance from a point to the nearest road polyline.
    pub fn distance_to_road(&self, x: f64, y: f64) -> f64 {
        let mut best = f64::INFINITY;
        for line in &self.polylines {
            if line.len() == 1 {
                best = best.min((x - line[0].0).hypot(y - line[0].1));
            }
            for seg in line.windows(2) {
                best = best.min(point_segment_distance((x, y), seg[0], seg[1]));
            }
        }
        best
    }

    /// Render the raw feature for a pose: unit-norm blend of the signed-cell
    /// signatures around it (scene block) followed by the nuisance component
    /// plus small isotropic noise (nuisance block). The scene block is an
    /// exact function of (pose, heading sector); only the nuisance block
    /// depends on `nuisance_seed`.
    pub fn render_feature(&self, pose: &GeoPose, nuisance_seed: u64) -> Result<Vec<f64>> {
        if !pose.is_finite() {
            return Err(Error::NonFinite("pose"));
        }
        if !self.contains(pose.x, pose.y) {
            return Err(Error::OffRoad {
                x: pose.x,
                y: pose.y,
            });
        }
        let cfg = &self.config;
        let sector = sector_of(pose.heading) as i64;
        let r = cfg.blend_radius;
        let (c0x, c0y) = self.cell_of(pose.x - r, pose.y - r);
        let (c1x, c1y) = self.cell_of(pose.x + r, pose.y + r);

        // Angular mixing weights over the pose's sector and its neighbors.
        let sector_weights: Vec<(u8, f64)> = (-2i64..=2)
            .map(|offset| {
                let s = (sector + offset).rem_euclid(NUM_SECTORS as i64) as u8;
                let center = f64::from(s) * SECTOR_WIDTH;
                let delta = crate::geo::heading_diff(pose.heading, center);
                let ratio = delta / cfg.heading_blend_scale;
                (s, (-ratio * ratio).exp())
            })
            .collect();

        let mut scene = vec![0.0; cfg.scene_dim];
        let mut total_weight = 0.0;
        for cx in c0x..=c1x {
            for cy in c0y..=c1y {
                if !self.signed.contains(&(cx, cy)) {
                    continue;
                }
                let (mx, my) = self.cell_center((cx, cy));
                let d = (pose.x - mx).hypot(pose.y - my);
                if d > r {
                    continue;
                }
                let w = (-(d / cfg.blend_scale) * (d / cfg.blend_scale)).exp();
                for &(s, wh) in &sector_weights {
                    let sig = &self.signatures[&(cx, cy, s)];
                    for (acc, v) in scene.iter_mut().zip(sig) {
                        *acc += w * wh * v;
                    }
                }
                total_weight += w;
            }
        }
        if total_weight <= 0.0 {
            return Err(Error::OffRoad {
                x: pose.x,
                y: pose.y,
            });
        }
        let norm = scene.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut scene {
                *v /= norm;
            }
        }

        let mut rng = crate::rng::rng_for(nuisance_seed, "nuisance");
        let normal = StandardNormal;
        let mut nuisance: Vec<f64> = (0..cfg.nuisance_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let nnorm = nuisance.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nnorm > 0.0 {
            for v in &mut nuisance {
                *v = *v / nnorm * cfg.nuisance_strength;
            }
        }
        for v in &mut nuisance {
            let noise: f64 = normal.sample(&mut rng);
            *v += cfg.feature_noise * noise;
        }

        let mut feature = scene;
        feature.extend(nuisance);
        Ok(feature)
    }
}

fn unit_gaussian(dim: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let normal = StandardNormal;
    let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Street-identity mix for a cell: the road blocks (graph edges) within
/// reach, Gaussian-weighted by distance and normalized to unit total
/// weight. Falls back to the nearest edge when none is in reach.
fn street_mix(config: &WorldConfig, graph: &RoadGraph, cell: (i64, i64)) -> Vec<(u32, f64)> {
    let center = (
        (cell.0 as f64 + 0.5) * config.cell_size,
        (cell.1 as f64 + 0.5) * config.cell_size,
    );
    let reach = 2.0 * config.street_blend_scale;
    let mut mix: Vec<(u32, f64)> = Vec::new();
    let mut nearest: Option<(f64, u32)> = None;
    for (idx, &(i, j)) in graph.edges.iter().enumerate() {
        let d = point_segment_distance(center, graph.nodes[i as usize], graph.nodes[j as usize]);
        if nearest.is_none_or(|(bd, _)| d < bd) {
            nearest = Some((d, idx as u32));
        }
        if d <= reach {
            let ratio = d / config.street_blend_scale;
            mix.push((idx as u32, (-ratio * ratio).exp()));
        }
    }
    if mix.is_empty() {
        // Isolated cell (point worlds): one synthetic street id.
        mix.push((nearest.map(|(_, i)| i).unwrap_or(u32::MAX), 1.0));
    }
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut mix {
        *w /= total;
    }
    mix
}

/// Distinctiveness factor of a road block, in [min, 1].
fn block_distinctiveness(config: &WorldConfig, seed: u64, block: u32) -> f64 {
    let mut rng = rng_for_indexed(seed, "block-distinct", u64::from(block));
    let u: f64 = rand::Rng::random(&mut rng);
    config.distinctiveness_min + (1.0 - config.distinctiveness_min) * u
}

/// Unit-norm signature for one (cell, sector): the per-cell local part
/// followed by the blended street part. The energy split depends on the
/// cell's distinctiveness: local carries (1 - street_energy) * lambda of
/// the energy, the street the rest, so featureless stretches are
/// street-dominated. Derived from the world seed so save/load regenerates
/// it bit-identically.
fn cell_signature(
    config: &WorldConfig,
    seed: u64,
    cx: i64,
    cy: i64,
    street_mix: &[(u32, f64)],
    sector: u8,
) -> Vec<f64> {
    // Cells are non-negative in-extent; pack them into one stream index.
    let cell_key = (cx as u64)
        .wrapping_mul(0x0002_0000)
        .wrapping_add(cy as u64)
        .wrapping_mul(0x100)
        .wrapping_add(u64::from(sector));
    let lambda: f64 = street_mix
        .iter()
        .map(|&(block, w)| w * block_distinctiveness(config, seed, block))
        .sum();
    let local_energy = ((1.0 - config.street_energy) * lambda).min(1.0 - 1e-9);
    let local_dim = config.scene_dim - config.street_dim;
    let mut rng = rng_for_indexed(seed, "scene-signature", cell_key);
    let mut sig = unit_gaussian(local_dim, &mut rng);
    let local_scale = local_energy.sqrt();
    for v in &mut sig {
        *v *= local_scale;
    }

    let mut street = vec![0.0; config.street_dim];
    for &(block, w) in street_mix {
        let block_key = u64::from(block) * 0x100 + u64::from(sector);
        let mut street_rng = rng_for_indexed(seed, "street-signature", block_key);
        let part = unit_gaussian(config.street_dim, &mut street_rng);
        for (acc, v) in street.iter_mut().zip(part) {
            *acc += w * v;
        }
    }
    let norm = street.iter().map(|v| v * v).sum::<f64>().sqrt();
    let street_scale = (1.0 - local_energy).sqrt();
    if norm > 0.0 {
        for v in &mut street {
            *v = *v / norm * street_scale;
        }
    }
    sig.extend(street);
    sig
}

fn road_positions(extent: f64, spacing: f64) -> Vec<f64> {
    if extent <= spacing {
        return vec![extent / 2.0];
    }
    let mut xs = Vec::new();
    let mut x = spacing / 2.0;
    while x <= extent - spacing / 2.0 + 1e-9 {
        xs.push(x);
        x += spacing;
    }
    if xs.is_empty() {
        xs.push(extent / 2.0);
    }
    xs
}

fn build_polylines(config: &WorldConfig) -> Result<Vec<Vec<(f64, f64)>>> {
    match &config.roads {
        RoadLayout::Grid { spacing } => {
            if !(spacing > &0.0) {
                return Err(Error::InvalidWorld("grid spacing must be positive".into()));
            }
            let xs = road_positions(config.width, *spacing);
            let ys = road_positions(config.height, *spacing);
            let mut lines = Vec::new();
            for &x in &xs {
                lines.push(vec![(x, ys[0]), (x, *ys.last().unwrap())]);
            }
            for &y in &ys {
                lines.push(vec![(xs[0], y), (*xs.last().unwrap(), y)]);
            }
            Ok(lines)
        }
        RoadLayout::Polylines(lines) => {
            if lines.is_empty() {
                return Err(Error::InvalidWorld("empty road graph".into()));
            }
            Ok(lines.clone())
        }
    }
}

/// Build the routing graph: nodes at polyline vertices and crossings,
/// merged by quantized position; edges between consecutive split points.
/// Segments are split where other segments cross or touch them, so every
/// intersection is a junction node and each edge is one road block.
fn build_graph(polylines: &[Vec<(f64, f64)>]) -> RoadGraph {
    let segments: Vec<((f64, f64), (f64, f64))> = polylines
        .iter()
        .flat_map(|line| line.windows(2).map(|s| (s[0], s[1])))
        .collect();

    let quant = |v: f64| (v * 1000.0).round() as i64;
    let mut node_ids: HashMap<(i64, i64), u32> = HashMap::new();
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let mut intern = |p: (f64, f64), nodes: &mut Vec<(f64, f64)>| -> u32 {
        *node_ids.entry((quant(p.0), quant(p.1))).or_insert_with(|| {
            nodes.push(p);
            (nodes.len() - 1) as u32
        })
    };

    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (si, &(a, b)) in segments.iter().enumerate() {
        let dx = b.0 - a.0;
        let dy = b.1 - a.1;
        let len2 = dx * dx + dy * dy;
        let mut cuts: Vec<(f64, (f64, f64))> = vec![(0.0, a), (1.0, b)];
        if len2 > 0.0 {
            for (sj, &(c, d)) in segments.iter().enumerate() {
                if si == sj {
                    continue;
                }
                // Interior crossing of segment (a, b) with (c, d).
                let ex = d.0 - c.0;
                let ey = d.1 - c.1;
                let denom = dx * ey - dy * ex;
                if denom.abs() > 1e-12 {
                    let t = ((c.0 - a.0) * ey - (c.1 - a.1) * ex) / denom;
                    let u = ((c.0 - a.0) * dy - (c.1 - a.1) * dx) / denom;
                    if t > 1e-9 && t < 1.0 - 1e-9 && (-1e-9..=1.0 + 1e-9).contains(&u) {
                        cuts.push((t, (a.0 + t * dx, a.1 + t * dy)));
                    }
                }
                // Endpoints of other segments lying on this one.
                for p in [c, d] {
                    let t = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2;
                    if t > 1e-9 && t < 1.0 - 1e-9 {
                        let qx = a.0 + t * dx;
                        let qy = a.1 + t * dy;
                        if (p.0 - qx).hypot(p.1 - qy) < 1e-6 {
                            cuts.push((t, p));
                        }
                    }
                }
            }
        }
        cuts.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
        cuts.dedup_by(|u, v| (u.0 - v.0).abs() < 1e-9);
        for pair in cuts.windows(2) {
            let i = intern(pair[0].1, &mut nodes);
            let j = intern(pair[1].1, &mut nodes);
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
    }
    for line in polylines {
        if line.len() == 1 {
            intern(line[0], &mut nodes);
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(i, j) in &edges {
        adjacency[i as usize].push(j);
        adjacency[j as usize].push(i);
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    RoadGraph {
        nodes,
        adjacency,
        edges: edges.into_iter().collect(),
    }
}

fn check_connected(graph: &RoadGraph) -> Result<()> {
    if graph.nodes.is_empty() {
        return Err(Error::InvalidWorld("empty road graph".into()));
    }
    if !graph.has_edges() {
        // A single isolated point is a valid (if undrivable) world.
        if graph.nodes.len() == 1 {
            return Ok(());
        }
        return Err(Error::InvalidWorld(
            "road graph has vertices but no edges".into(),
        ));
    }
    let mut seen = vec![false; graph.nodes.len()];
    let start = graph
        .adjacency
        .iter()
        .position(|a| !a.is_empty())
        .unwrap_or(0);
    let mut stack = vec![start as u32];
    seen[start] = true;
    while let Some(n) = stack.pop() {
        for &m in &graph.adjacency[n as usize] {
            if !seen[m as usize] {
                seen[m as usize] = true;
                stack.push(m);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidWorld("road graph not connected".into()));
    }
    Ok(())
}

/// Cells whose center lies within 0.75 cell sizes of a road.
fn mark_signed_cells(polylines: &[Vec<(f64, f64)>], config: &WorldConfig) -> BTreeSet<(i64, i64)> {
    let cs = config.cell_size;
    let reach = 0.75 * cs;
    let (nx, ny) = (
        (config.width / cs).ceil() as i64,
        (config.height / cs).ceil() as i64,
    );
    let mut signed = BTreeSet::new();
    let mark_near = |a: (f64, f64), b: (f64, f64), signed: &mut BTreeSet<(i64, i64)>| {
        let x0 = (((a.0.min(b.0) - reach) / cs).floor() as i64).max(0);
        let x1 = (((a.0.max(b.0) + reach) / cs).floor() as i64).min(nx - 1);
        let y0 = (((a.1.min(b.1) - reach) / cs).floor() as i64).max(0);
        let y1 = (((a.1.max(b.1) + reach) / cs).floor() as i64).min(ny - 1);
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                let center = ((cx as f64 + 0.5) * cs, (cy as f64 + 0.5) * cs);
                if point_segment_distance(center, a, b) <= reach {
                    signed.insert((cx, cy));
                }
            }
        }
    };
    for line in polylines {
        if line.len() == 1 {
            mark_near(line[0], line[0], &mut signed);
        }
        for seg in line.windows(2) {
            mark_near(seg[0], seg[1], &mut signed);
        }
    }
    signed
}
