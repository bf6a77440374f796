//! Planar geometry primitives: poses, circular headings, and the local
//! tangent-frame conversion at the lat/lon boundary.
//!
//! All pipeline coordinates are meters in a local east/north frame; latitude
//! and longitude appear only in [`latlon_to_local`] / [`local_to_latlon`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Planar position plus heading. Heading is radians in `[0, 2π)`,
/// `0` = east, counter-clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl GeoPose {
    /// Build a pose, normalizing the heading into `[0, 2π)`.
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn distance_to(&self, other: &GeoPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn heading_diff_to(&self, other: &GeoPose) -> f64 {
        heading_diff(self.heading, other.heading)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// Normalize an angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return TAU when a is a tiny negative number
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_signed(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Circular heading difference: `min(|a-b|, 2π-|a-b|)`, in `[0, π]`.
pub fn heading_diff(a: f64, b: f64) -> f64 {
    let d = (normalize_angle(a) - normalize_angle(b)).abs();
    d.min(TAU - d)
}

/// Squared-distance helper for hot loops.
pub fn dist2(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = ax - bx;
    let dy = ay - by;
    dx * dx + dy * dy
}

/// Distance from point `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (px - ax).hypot(py - ay);
    }
    let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
    (px - (ax + t * dx)).hypot(py - (ay + t * dy))
}

/// Convert lat/lon (degrees) to local east/north meters around `origin`,
/// using the equirectangular tangent-plane approximation. Intended for
/// points within ~50 km of the origin.
pub fn latlon_to_local(lat: f64, lon: f64, origin: (f64, f64)) -> Result<(f64, f64)> {
    check_latitude(lat)?;
    check_latitude(origin.0)?;
    let lat0 = origin.0.to_radians();
    let x = EARTH_RADIUS_M * (lon - origin.1).to_radians() * lat0.cos();
    let y = EARTH_RADIUS_M * (lat - origin.0).to_radians();
    Ok((x, y))
}

/// Inverse of [`latlon_to_local`].
pub fn local_to_latlon(x: f64, y: f64, origin: (f64, f64)) -> Result<(f64, f64)> {
    check_latitude(origin.0)?;
    let lat0 = origin.0.to_radians();
    let lat = origin.0 + (y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.1 + (x / (EARTH_RADIUS_M * lat0.cos())).to_degrees();
    check_latitude(lat)?;
    Ok((lat, lon))
}

fn check_latitude(lat: f64) -> Result<()> {
    if !lat.is_finite() || lat.abs() > 85.0 {
        return Err(Error::LatitudeOutOfRange(lat));
    }
    Ok(())
}
