//! 2D primitives shared by the mobility, occlusion, and channel code.
//!
//! Everything is flat: footprints are oriented rectangles and visibility
//! reduces to segment-vs-rectangle intersection tests.

use serde::{Deserialize, Serialize};

/// A point or displacement in the ground plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// An oriented rectangle: `center`, `half_extent` along the local axes,
/// rotated by `heading` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Vec2,
    pub half_extent: Vec2,
    pub heading: f64,
}

impl Rect {
    pub fn new(center: Vec2, half_extent: Vec2, heading: f64) -> Self {
        debug_assert!(half_extent.x > 0.0 && half_extent.y > 0.0);
        Rect {
            center,
            half_extent,
            heading,
        }
    }

    /// Axis-aligned rectangle (heading 0).
    pub fn axis_aligned(center: Vec2, half_extent: Vec2) -> Self {
        Self::new(center, half_extent, 0.0)
    }

    /// Radius of the circumscribed circle, for cheap rejection tests.
    pub fn bounding_radius(&self) -> f64 {
        self.half_extent.norm()
    }

    /// Maps a world-frame point into the rectangle's local frame.
    fn to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.center;
        let (sin, cos) = self.heading.sin_cos();
        Vec2::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_extent.x && l.y.abs() <= self.half_extent.y
    }
}

/// True iff the closed segment `a`..`b` intersects `rect`.
///
/// Uses slab clipping in the rectangle's local frame, so endpoints inside
/// the rectangle and grazing contacts count as intersections.
pub fn segment_intersects_rect(a: Vec2, b: Vec2, rect: &Rect) -> bool {
    let p = rect.to_local(a);
    let q = rect.to_local(b);
    let d = q - p;

    let mut t_min = 0.0_f64;
    let mut t_max = 1.0_f64;
    for (origin, dir, h) in [
        (p.x, d.x, rect.half_extent.x),
        (p.y, d.y, rect.half_extent.y),
    ] {
        if dir.abs() < 1e-12 {
            if origin.abs() > h {
                return false;
            }
        } else {
            let mut t1 = (-h - origin) / dir;
            let mut t2 = (h - origin) / dir;
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            t_min = t_min.max(t1);
            t_max = t_max.min(t2);
            if t_min > t_max {
                return false;
            }
        }
    }
    true
}

/// Squared distance from point `p` to the segment `a`..`b`.
pub fn point_segment_dist_sq(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.x * ab.x + ab.y * ab.y;
    if len_sq < 1e-18 {
        let d = p - a;
        return d.x * d.x + d.y * d.y;
    }
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len_sq).clamp(0.0, 1.0);
    let c = a + ab * t;
    let d = p - c;
    d.x * d.x + d.y * d.y
}
