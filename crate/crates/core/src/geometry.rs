//! Planar geometry: poses, discs, oriented boxes and signed distances.
//!
//! All lengths are meters, all angles radians. Angles are kept in `(-pi, pi]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A rigid transform in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// `self * other`: express `other` (given in the frame of `self`) in the parent frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let [x, y] = self.transform_point([other.x, other.y]);
        Pose2::new(x, y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Position and heading difference, heading wrapped.
    pub fn delta(&self, other: &Pose2) -> [f64; 3] {
        [
            other.x - self.x,
            other.y - self.y,
            wrap_angle(other.theta - self.theta),
        ]
    }

    /// Linear interpolation along the shorter heading arc.
    pub fn lerp(&self, other: &Pose2, s: f64) -> Pose2 {
        let d = self.delta(other);
        Pose2::new(self.x + s * d[0], self.y + s * d[1], self.theta + s * d[2])
    }
}

/// Axis-aligned rectangle, used for static obstacles and operating regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Euclidean distance from `p` to the rectangle; zero inside.
    pub fn distance_outside(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    pub fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
        ]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn is_valid(&self) -> bool {
        self.min.iter().chain(self.max.iter()).all(|v| v.is_finite())
            && self.min[0] <= self.max[0]
            && self.min[1] <= self.max[1]
    }

    pub fn as_box(&self) -> OrientedBox {
        let [cx, cy] = self.center();
        let [w, h] = self.extent();
        OrientedBox {
            pose: Pose2::new(cx, cy, 0.0),
            half_w: 0.5 * w,
            half_h: 0.5 * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub pose: Pose2,
    pub half_w: f64,
    pub half_h: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (hw, hh) = (self.half_w, self.half_h);
        [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]].map(|c| self.pose.transform_point(c))
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.pose.theta.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Signed distance from a point to the box boundary; negative inside.
    pub fn point_signed_distance(&self, p: [f64; 2]) -> f64 {
        let [lx, ly] = self.pose.inverse_transform_point(p);
        let dx = lx.abs() - self.half_w;
        let dy = ly.abs() - self.half_h;
        if dx > 0.0 || dy > 0.0 {
            dx.max(0.0).hypot(dy.max(0.0))
        } else {
            dx.max(dy)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disc(Disc),
    Box(OrientedBox),
}

impl Shape {
    pub fn disc(center: [f64; 2], radius: f64) -> Self {
        Shape::Disc(Disc { center, radius })
    }

    pub fn rect(pose: Pose2, width: f64, height: f64) -> Self {
        Shape::Box(OrientedBox {
            pose,
            half_w: 0.5 * width,
            half_h: 0.5 * height,
        })
    }

    pub fn center(&self) -> [f64; 2] {
        match self {
            Shape::Disc(d) => d.center,
            Shape::Box(b) => b.pose.position(),
        }
    }

    /// Radius of the smallest centered circle containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Disc(d) => d.radius,
            Shape::Box(b) => b.half_w.hypot(b.half_h),
        }
    }

    /// Conservative x-extent, used for sweep-and-prune.
    pub fn x_extent(&self) -> (f64, f64) {
        let c = self.center();
        let r = self.bounding_radius();
        (c[0] - r, c[0] + r)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

fn project(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let p = c[0] * axis[0] + c[1] * axis[1];
        (lo.min(p), hi.max(p))
    })
}

/// Separating-axis test on the four face normals. Returns the smallest
/// overlap depth, or `None` when a separating axis exists.
fn sat_overlap(a: &OrientedBox, b: &OrientedBox) -> Option<f64> {
    let ca = a.corners();
    let cb = b.corners();
    let mut depth = f64::INFINITY;
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        let overlap = amax.min(bmax) - amin.max(bmin);
        if overlap <= 0.0 {
            return None;
        }
        depth = depth.min(overlap);
    }
    Some(depth)
}

fn box_box_signed_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if let Some(depth) = sat_overlap(a, b) {
        return -depth;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for (verts, edges) in [(&ca, &cb), (&cb, &ca)] {
        for v in verts.iter() {
            for i in 0..4 {
                best = best.min(point_segment_distance(*v, edges[i], edges[(i + 1) % 4]));
            }
        }
    }
    best
}

/// Signed separation between two shapes: positive gap when apart, negative
/// (approximate penetration depth) when overlapping.
pub fn signed_distance(a: &Shape, b: &Shape) -> f64 {
    match (a, b) {
        (Shape::Disc(p), Shape::Disc(q)) => dist(p.center, q.center) - p.radius - q.radius,
        (Shape::Disc(d), Shape::Box(bx)) | (Shape::Box(bx), Shape::Disc(d)) => {
            bx.point_signed_distance(d.center) - d.radius
        }
        (Shape::Box(p), Shape::Box(q)) => box_box_signed_distance(p, q),
    }
}

/// Cheap lower bound on the separation from bounding circles.
pub fn bounding_gap(a: &Shape, b: &Shape) -> f64 {
    dist(a.center(), b.center()) - a.bounding_radius() - b.bounding_radius()
}

/// True when the shapes are closer than `clearance` (strict).
pub fn within(a: &Shape, b: &Shape, clearance: f64) -> bool {
    if bounding_gap(a, b) >= clearance {
        return false;
    }
    signed_distance(a, b) < clearance
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(-0.5 - 2.0 * PI) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose2::new(1.0, -2.0, 0.7);
        let id = p.compose(&p.inverse());
        assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12 && id.theta.abs() < 1e-12);
    }

    #[test]
    fn disc_box_distance() {
        let b = Shape::rect(Pose2::new(0.0, 0.0, 0.0), 2.0, 2.0);
        let d = Shape::disc([3.0, 0.0], 0.5);
        assert!((signed_distance(&b, &d) - 1.5).abs() < 1e-12);
        let corner = Shape::disc([2.0, 2.0], 0.1);
        assert!((signed_distance(&b, &corner) - (2f64.sqrt() - 0.1)).abs() < 1e-12);
        let inside = Shape::disc([0.5, 0.0], 0.1);
        assert!(signed_distance(&b, &inside) < 0.0);
    }

    #[test]
    fn rotated_boxes_sat() {
        let a = Shape::rect(Pose2::new(0.0, 0.0, 0.0), 2.0, 2.0);
        // Diamond whose tip pokes 0.1 into `a`.
        let h = 0.5 * 2f64.sqrt();
        let b = Shape::rect(Pose2::new(1.0 + h - 0.1, 0.0, PI / 4.0), 1.0, 1.0);
        assert!(signed_distance(&a, &b) < 0.0);
        let c = Shape::rect(Pose2::new(1.0 + h + 0.1, 0.0, PI / 4.0), 1.0, 1.0);
        let sd = signed_distance(&a, &c);
        assert!((sd - 0.1).abs() < 1e-9, "{sd}");
    }

    #[test]
    fn aabb_distance_outside() {
        let r = Aabb::new([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(r.distance_outside([0.5, 0.5]), 0.0);
        assert!((r.distance_outside([2.0, 0.5]) - 1.0).abs() < 1e-15);
        assert!((r.distance_outside([4.0, 5.0]) - 5.0).abs() < 1e-12);
    }
}
