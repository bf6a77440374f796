//! Uniform grid index over 2-D points.
//!
//! Backs both the frame database and the keyframe index: radius queries and
//! k-nearest-neighbor searches that return exactly what a brute-force scan
//! returns (asserted by oracle tests), with deterministic ordering.

use crate::geo::dist2;
use std::collections::HashMap;

/// Grid cell coordinate.
pub type Cell = (i64, i64);

/// Uniform grid over points, keyed by `cell_size` cells. Stores a copy of
/// the point coordinates so queries can do exact distance filtering.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    points: Vec<(f64, f64)>,
    cells: HashMap<Cell, Vec<u32>>,
}

impl GridIndex {
    pub fn build(points: Vec<(f64, f64)>, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell_size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            cells
                .entry(cell_of(x, y, cell_size))
                .or_default()
                .push(i as u32);
        }
        Self {
            cell_size,
            points,
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Cell {
        cell_of(x, y, self.cell_size)
    }

    pub fn point(&self, idx: u32) -> (f64, f64) {
        self.points[idx as usize]
    }

    /// Indices of all points within `radius` of `center` (inclusive),
    /// ascending by index.
    pub fn within_radius(&self, center: (f64, f64), radius: f64) -> Vec<u32> {
        if radius < 0.0 {
            return Vec::new();
        }
        let r2 = radius * radius;
        let (cx0, cy0) = cell_of(center.0 - radius, center.1 - radius, self.cell_size);
        let (cx1, cy1) = cell_of(center.0 + radius, center.1 + radius, self.cell_size);
        let mut out = Vec::new();
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                if let Some(ids) = self.cells.get(&(cx, cy)) {
                    for &i in ids {
                        let (px, py) = self.points[i as usize];
                        if dist2(px, py, center.0, center.1) <= r2 {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `center`, ordered by (distance, index).
    /// Returns fewer when the index holds fewer than `k` points.
    pub fn nearest_k(&self, center: (f64, f64), k: usize) -> Vec<u32> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        // Expand the search radius until at least k hits fall inside it; any
        // unscanned point is then farther than every hit, so the k nearest
        // are among the hits.
        let want = k.min(self.points.len());
        let mut radius = self.cell_size;
        loop {
            let mut hits = self.within_radius(center, radius);
            if hits.len() >= want {
                hits.sort_by(|&a, &b| {
                    let (ax, ay) = self.points[a as usize];
                    let (bx, by) = self.points[b as usize];
                    let da = dist2(ax, ay, center.0, center.1);
                    let db = dist2(bx, by, center.0, center.1);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                });
                hits.truncate(k);
                return hits;
            }
            radius *= 2.0;
        }
    }
}

fn cell_of(x: f64, y: f64, cell_size: f64) -> Cell {
    (
        (x / cell_size).floor() as i64,
        (y / cell_size).floor() as i64,
    )
}
