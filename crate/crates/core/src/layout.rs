//! Rectilinear floor polygons and vertical-prism room layouts.
//!
//! Footprints live in the `x–z` plane in meters with the camera at the origin.
//! Points are `[x, z]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::DEFAULT_CAMERA_HEIGHT;

pub type Point = [f64; 2];

const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("footprint needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("edge {0} is not axis-aligned or does not alternate orientation")]
    NotRectilinear(usize),
    #[error("footprint edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("footprint has zero area")]
    ZeroArea,
    #[error("room height {height} must exceed camera height {camera} > 0")]
    InvalidHeight { height: f64, camera: f64 },
}

/// A room as a vertical prism: floor at `y = −camera_height`, ceiling at
/// `y = height − camera_height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomLayout3D {
    pub footprint: Vec<Point>,
    pub height: f64,
    pub camera_height: f64,
}

impl RoomLayout3D {
    pub fn new(footprint: Vec<Point>, height: f64) -> Self {
        Self {
            footprint,
            height,
            camera_height: DEFAULT_CAMERA_HEIGHT,
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if !(self.camera_height > 0.0 && self.height > self.camera_height) {
            return Err(LayoutError::InvalidHeight {
                height: self.height,
                camera: self.camera_height,
            });
        }
        validate_rectilinear(&self.footprint)
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.footprint).abs()
    }

    pub fn volume(&self) -> f64 {
        self.area() * self.height
    }

    /// Vertical extent `(floor_y, ceiling_y)` in the camera frame.
    pub fn y_range(&self) -> (f64, f64) {
        (-self.camera_height, self.height - self.camera_height)
    }
}

/// Shoelace area, positive for counter-clockwise order in `(x, z)`.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let [x0, z0] = poly[i];
        let [x1, z1] = poly[(i + 1) % n];
        s += x0 * z1 - x1 * z0;
    }
    s / 2.0
}

fn edge(poly: &[Point], i: usize) -> (Point, Point) {
    (poly[i], poly[(i + 1) % poly.len()])
}

/// `Some(true)` for an x-parallel edge (constant z), `Some(false)` for a
/// z-parallel edge, `None` if the edge is degenerate or oblique.
fn edge_axis(a: Point, b: Point) -> Option<bool> {
    let scale = 1.0 + a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs());
    let tol = AXIS_TOL * scale;
    let dx = (b[0] - a[0]).abs();
    let dz = (b[1] - a[1]).abs();
    match (dx > tol, dz > tol) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

/// Checks that `poly` is a simple polygon whose edges are axis-aligned and
/// alternate between the two axes.
pub fn validate_rectilinear(poly: &[Point]) -> Result<(), LayoutError> {
    let n = poly.len();
    if n < 4 {
        return Err(LayoutError::TooFewVertices(n));
    }
    let mut prev = None;
    for i in 0..n {
        let (a, b) = edge(poly, i);
        let axis = edge_axis(a, b).ok_or(LayoutError::NotRectilinear(i))?;
        if prev == Some(axis) {
            return Err(LayoutError::NotRectilinear(i));
        }
        prev = Some(axis);
    }
    // closing alternation: first edge must differ from last
    if edge_axis(poly[0], poly[1]) == edge_axis(poly[n - 1], poly[0]) {
        return Err(LayoutError::NotRectilinear(0));
    }
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = edge(poly, i);
            let (c, d) = edge(poly, j);
            if segments_touch(a, b, c, d) {
                return Err(LayoutError::SelfIntersecting(i, j));
            }
        }
    }
    if signed_area(poly).abs() <= AXIS_TOL {
        return Err(LayoutError::ZeroArea);
    }
    Ok(())
}

fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let overlap = |p0: f64, p1: f64, q0: f64, q1: f64| {
        p0.min(p1) <= q0.max(q1) && q0.min(q1) <= p0.max(p1)
    };
    overlap(a[0], b[0], c[0], d[0]) && overlap(a[1], b[1], c[1], d[1])
}

/// Interior angles in degrees, each 90 or 270 for a valid rectilinear polygon.
pub fn interior_angles(poly: &[Point]) -> Vec<f64> {
    let n = poly.len();
    let orient = signed_area(poly).signum();
    (0..n)
        .map(|i| {
            let p = poly[(i + n - 1) % n];
            let q = poly[i];
            let r = poly[(i + 1) % n];
            let e0 = [q[0] - p[0], q[1] - p[1]];
            let e1 = [r[0] - q[0], r[1] - q[1]];
            let cross = e0[0] * e1[1] - e0[1] * e1[0];
            let dot = e0[0] * e1[0] + e0[1] * e1[1];
            let turn = cross.atan2(dot).to_degrees() * orient;
            180.0 - turn
        })
        .collect()
}

/// Even-odd point containment.
pub fn contains(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = edge(poly, i);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Nearest boundary hit of the ray `origin + t·dir`, `t > 0`: `(t, edge index)`.
pub fn ray_hit(poly: &[Point], origin: Point, dir: Point) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..poly.len() {
        let (a, b) = edge(poly, i);
        let e = [b[0] - a[0], b[1] - a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = [a[0] - origin[0], a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let s = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best
}

/// Distance from `p` to the nearest point of the boundary.
pub fn boundary_distance(poly: &[Point], p: Point) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (a, b) = edge(poly, i);
            let e = [b[0] - a[0], b[1] - a[1]];
            let len2 = e[0] * e[0] + e[1] * e[1];
            let t = (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * e[0], a[1] + t * e[1]];
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Axis-aligned rectangle `[x0, x1, z0, z1]`.
pub type Rect = [f64; 4];

/// Splits a simple rectilinear polygon into disjoint rectangles, one x-slab
/// between consecutive vertex abscissae at a time.
pub fn rectangles(poly: &[Point]) -> Vec<Rect> {
    let mut xs: Vec<f64> = poly.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let xm = 0.5 * (x0 + x1);
        let mut zs: Vec<f64> = (0..poly.len())
            .filter_map(|i| {
                let (a, b) = edge(poly, i);
                let spans = a[0].min(b[0]) < xm && xm < a[0].max(b[0]);
                spans.then(|| a[1] + (xm - a[0]) / (b[0] - a[0]) * (b[1] - a[1]))
            })
            .collect();
        zs.sort_by(f64::total_cmp);
        for pair in zs.chunks_exact(2) {
            out.push([x0, x1, pair[0], pair[1]]);
        }
    }
    out
}

/// Area of the intersection of two simple rectilinear polygons.
pub fn intersection_area(a: &[Point], b: &[Point]) -> f64 {
    let ra = rectangles(a);
    let rb = rectangles(b);
    let mut area = 0.0;
    for p in &ra {
        for q in &rb {
            let w = p[1].min(q[1]) - p[0].max(q[0]);
            let h = p[3].min(q[3]) - p[2].max(q[2]);
            if w > 0.0 && h > 0.0 {
                area += w * h;
            }
        }
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(c: Point, s: f64) -> Vec<Point> {
        let h = s / 2.0;
        vec![
            [c[0] - h, c[1] - h],
            [c[0] + h, c[1] - h],
            [c[0] + h, c[1] + h],
            [c[0] - h, c[1] + h],
        ]
    }

    fn l_room() -> Vec<Point> {
        vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0]]
    }

    #[test]
    fn areas_and_orientation() {
        assert_eq!(signed_area(&square([0.0, 0.0], 4.0)), 16.0);
        let mut l = l_room();
        assert_eq!(signed_area(&l), 12.0);
        l.reverse();
        assert_eq!(signed_area(&l), -12.0);
    }

    #[test]
    fn validation() {
        assert!(validate_rectilinear(&l_room()).is_ok());
        assert!(validate_rectilinear(&square([1.0, 2.0], 3.0)).is_ok());
        let oblique = vec![[0.0, 0.0], [4.0, 0.5], [4.0, 4.0], [0.0, 4.0]];
        assert!(matches!(validate_rectilinear(&oblique), Err(LayoutError::NotRectilinear(_))));
        let bowtie = vec![
            [0.0, 0.0],
            [4.0, 0.0],
            [4.0, 2.0],
            [-1.0, 2.0],
            [-1.0, 1.0],
            [2.0, 1.0],
            [2.0, 4.0],
            [0.0, 4.0],
        ];
        assert!(validate_rectilinear(&bowtie).is_err());
    }

    #[test]
    fn angles() {
        let a = interior_angles(&l_room());
        let reflex = a.iter().filter(|x| (**x - 270.0).abs() < 1e-9).count();
        let right = a.iter().filter(|x| (**x - 90.0).abs() < 1e-9).count();
        assert_eq!((reflex, right), (1, 5));
        let mut rev = l_room();
        rev.reverse();
        let b = interior_angles(&rev);
        assert_eq!(b.iter().filter(|x| (**x - 270.0).abs() < 1e-9).count(), 1);
    }

    #[test]
    fn ray_hits_nearest_wall() {
        let sq = square([0.0, 0.0], 4.0);
        let (t, _) = ray_hit(&sq, [0.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let (t, _) = ray_hit(&sq, [0.0, 0.0], [d, d]).unwrap();
        assert!((t - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn offset_squares_intersect_in_half() {
        let a = square([0.0, 0.0], 4.0);
        let b = square([2.0, 0.0], 4.0);
        assert_eq!(intersection_area(&a, &b), 8.0);
        assert_eq!(intersection_area(&a, &a), 16.0);
    }

    #[test]
    fn rectangles_cover_polygon() {
        let r = rectangles(&l_room());
        let total: f64 = r.iter().map(|q| (q[1] - q[0]) * (q[3] - q[2])).sum();
        assert_eq!(total, 12.0);
        assert_eq!(intersection_area(&l_room(), &square([1.0, 1.0], 2.0)), 4.0);
        assert_eq!(intersection_area(&l_room(), &square([3.0, 3.0], 2.0)), 0.0);
    }

    #[test]
    fn containment_and_clearance() {
        let l = l_room();
        assert!(contains(&l, [1.0, 1.0]));
        assert!(!contains(&l, [3.0, 3.0]));
        assert!((boundary_distance(&l, [1.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((boundary_distance(&l, [1.5, 2.5]) - 0.5).abs() < 1e-12);
    }
}
