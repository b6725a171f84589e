//! Rotated quadrilateral geometry.
//!
//! Coordinates follow the raster convention: x grows rightward, y grows
//! downward. Edge inclinations are undirected and live in `[0, π)`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

/// Quads with an absolute area below this (px²) are rejected.
pub const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("quad has non-finite coordinates")]
    NonFinite,
    #[error("quad is degenerate (|area| = {0:e})")]
    DegenerateQuad(f64),
    #[error("quad edges intersect each other")]
    SelfIntersecting,
    #[error("exact IoU requires convex quads")]
    NonConvexInput,
    #[error("both quads are empty at this raster resolution")]
    EmptyUnion,
    #[error("raster resolution must be at least 64, got {0}")]
    ResolutionTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Undirected inclination of the segment `from -> to`, in `[0, π)`.
pub fn edge_inclination(from: Point2, to: Point2) -> f64 {
    let d = to - from;
    let a = d.y.atan2(d.x).rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Signed shoelace area. Positive means clockwise on screen (raster frame).
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    acc / 2.0
}

/// A validated quadrilateral: four finite, perimeter-ordered vertices,
/// simple, with non-negligible area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    vertices: [Point2; 4],
}

impl Quad {
    /// Validates four perimeter-ordered points. Either traversal direction
    /// is accepted; the input order is kept.
    pub fn new(vertices: [Point2; 4]) -> Result<Self, GeomError> {
        if !vertices.iter().all(|p| p.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        let v = &vertices;
        if segments_cross(v[0], v[1], v[2], v[3]) || segments_cross(v[1], v[2], v[3], v[0]) {
            return Err(GeomError::SelfIntersecting);
        }
        let area = signed_area(v);
        if area.abs() < DEGENERATE_AREA {
            return Err(GeomError::DegenerateQuad(area.abs()));
        }
        Ok(Self { vertices })
    }

    /// Builds a quad from a flat `[x1, y1, ..., x4, y4]` array.
    pub fn from_flat(c: [f64; 8]) -> Result<Self, GeomError> {
        Self::new([
            Point2::new(c[0], c[1]),
            Point2::new(c[2], c[3]),
            Point2::new(c[4], c[5]),
            Point2::new(c[6], c[7]),
        ])
    }

    pub fn vertices(&self) -> &[Point2; 4] {
        &self.vertices
    }

    pub fn vertex(&self, k: usize) -> Point2 {
        self.vertices[k % 4]
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let v = &self.vertices;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// True when the vertices run clockwise on screen (y down).
    pub fn is_clockwise(&self) -> bool {
        self.signed_area() > 0.0
    }

    pub fn is_convex(&self) -> bool {
        let mut sign = 0.0_f64;
        for k in 0..4 {
            let e0 = self.vertex(k + 1) - self.vertex(k);
            let e1 = self.vertex(k + 2) - self.vertex(k + 1);
            let c = e0.cross(e1);
            if c != 0.0 {
                if sign != 0.0 && c.signum() != sign {
                    return false;
                }
                sign = c.signum();
            }
        }
        true
    }

    /// Same vertices, traversed clockwise on screen. The first vertex stays.
    pub fn to_clockwise(&self) -> Quad {
        if self.is_clockwise() {
            *self
        } else {
            let v = self.vertices;
            Quad {
                vertices: [v[0], v[3], v[2], v[1]],
            }
        }
    }

    /// Cyclic shift: the result starts at vertex `start`.
    pub fn rotated_start(&self, start: usize) -> Quad {
        let mut vertices = self.vertices;
        vertices.rotate_left(start % 4);
        Quad { vertices }
    }

    /// Applies `f` to every vertex and revalidates.
    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Result<Quad, GeomError> {
        Quad::new(self.vertices.map(f))
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        bounds_of(&self.vertices)
    }

    pub fn centroid(&self) -> Point2 {
        let s = self.vertices.iter().fold(Point2::default(), |a, &p| a + p);
        s * 0.25
    }
}

/// Validates raw points into a [`Quad`].
pub fn quad_from_points(raw: [Point2; 4]) -> Result<Quad, GeomError> {
    Quad::new(raw)
}

fn bounds_of(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// Proper crossing of segments `ab` and `cd` (touching or collinear overlap
/// does not count; those cases surface as degenerate area instead).
fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Eight keypoints with their edge inclinations.
///
/// `points[0..4]` are the vertices, `points[4 + k]` is the midpoint of edge
/// `k -> k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointSet {
    pub points: [Point2; 8],
    /// For vertex `k`: inclinations of edges `k -> k+1` and `k -> k-1`.
    pub vertex_angles: [[f64; 2]; 4],
    /// For midpoint `4 + k`: inclination of edge `k -> k+1`.
    pub midpoint_angles: [f64; 4],
}

impl KeypointSet {
    pub fn vertices(&self) -> &[Point2] {
        &self.points[..4]
    }

    pub fn midpoints(&self) -> &[Point2] {
        &self.points[4..]
    }
}

pub fn keypoints_from_quad(q: &Quad) -> KeypointSet {
    let v = q.vertices();
    let mut points = [Point2::default(); 8];
    let mut vertex_angles = [[0.0; 2]; 4];
    let mut midpoint_angles = [0.0; 4];
    for k in 0..4 {
        let next = v[(k + 1) % 4];
        let prev = v[(k + 3) % 4];
        points[k] = v[k];
        points[4 + k] = v[k].midpoint(next);
        vertex_angles[k] = [edge_inclination(v[k], next), edge_inclination(v[k], prev)];
        midpoint_angles[k] = vertex_angles[k][0];
    }
    KeypointSet {
        points,
        vertex_angles,
        midpoint_angles,
    }
}

/// Sutherland–Hodgman clip of `subject` against the convex polygon `clip`,
/// which must have positive signed area.
fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let s = input[j];
            let e = input[(j + 1) % m];
            let sd = orient(a, b, s);
            let ed = orient(a, b, e);
            let s_in = sd >= 0.0;
            let e_in = ed >= 0.0;
            if s_in != e_in {
                let t = sd / (sd - ed);
                out.push(s + (e - s) * t);
            }
            if e_in {
                out.push(e);
            }
        }
    }
    out
}

fn positive_ring(q: &Quad) -> [Point2; 4] {
    q.to_clockwise().vertices
}

fn same_polygon(a: &Quad, b: &Quad) -> bool {
    let pa = positive_ring(a);
    let pb = positive_ring(b);
    (0..4).any(|s| (0..4).all(|k| pa[k] == pb[(k + s) % 4]))
}

fn total_order(a: &Quad, b: &Quad) -> std::cmp::Ordering {
    let fa = a.to_flat();
    let fb = b.to_flat();
    for (x, y) in fa.iter().zip(fb.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Exact IoU of two convex quads via convex clipping and shoelace area.
pub fn iou_exact(a: &Quad, b: &Quad) -> Result<f64, GeomError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeomError::NonConvexInput);
    }
    if same_polygon(a, b) {
        return Ok(1.0);
    }
    // fixed argument order makes the result bitwise symmetric
    let (a, b) = if total_order(a, b).is_le() {
        (a, b)
    } else {
        (b, a)
    };
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    if alo.x >= bhi.x || blo.x >= ahi.x || alo.y >= bhi.y || blo.y >= ahi.y {
        return Ok(0.0);
    }
    let area_a = a.area();
    let area_b = b.area();
    let inter = clip_convex(&positive_ring(a), &positive_ring(b));
    let inter_area = if inter.len() < 3 {
        0.0
    } else {
        signed_area(&inter).abs()
    };
    let inter_area = inter_area.min(area_a).min(area_b);
    let union = area_a + area_b - inter_area;
    Ok((inter_area / union).clamp(0.0, 1.0))
}

/// Half-open x-intervals where the horizontal line at `y` is inside `poly`
/// (even-odd rule).
fn scanline_spans(poly: &[Point2; 4], y: f64, spans: &mut Vec<(f64, f64)>) {
    let mut xs = [0.0f64; 4];
    let mut n = 0;
    for k in 0..4 {
        let p = poly[k];
        let q = poly[(k + 1) % 4];
        if (p.y <= y) != (q.y <= y) {
            xs[n] = p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y);
            n += 1;
        }
    }
    let xs = &mut xs[..n];
    xs.sort_by(f64::total_cmp);
    spans.clear();
    for pair in xs.chunks_exact(2) {
        spans.push((pair[0], pair[1]));
    }
}

/// Columns whose pixel centers fall in `[lo, hi)`, as a half-open index range.
fn column_range(lo: f64, hi: f64, x0: f64, dx: f64, res: usize) -> (i64, i64) {
    let first = ((lo - x0) / dx - 0.5).ceil() as i64;
    let end = ((hi - x0) / dx - 0.5).ceil() as i64;
    (first.max(0), end.min(res as i64))
}

/// Pixel-counting IoU: both quads are rasterized by pixel-center sampling on
/// a `resolution × resolution` grid spanning their joint bounding box.
pub fn iou_pixel(a: &Quad, b: &Quad, resolution: usize) -> Result<f64, GeomError> {
    if resolution < 64 {
        return Err(GeomError::ResolutionTooSmall(resolution));
    }
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let x0 = alo.x.min(blo.x);
    let y0 = alo.y.min(blo.y);
    let dx = (ahi.x.max(bhi.x) - x0) / resolution as f64;
    let dy = (ahi.y.max(bhi.y) - y0) / resolution as f64;

    let mut spans_a = Vec::with_capacity(2);
    let mut spans_b = Vec::with_capacity(2);
    let (mut count_a, mut count_b, mut count_both) = (0i64, 0i64, 0i64);
    for row in 0..resolution {
        let y = y0 + (row as f64 + 0.5) * dy;
        scanline_spans(a.vertices(), y, &mut spans_a);
        scanline_spans(b.vertices(), y, &mut spans_b);
        let ra: Vec<(i64, i64)> = spans_a
            .iter()
            .map(|&(l, h)| column_range(l, h, x0, dx, resolution))
            .collect();
        let rb: Vec<(i64, i64)> = spans_b
            .iter()
            .map(|&(l, h)| column_range(l, h, x0, dx, resolution))
            .collect();
        for &(s, e) in &ra {
            count_a += (e - s).max(0);
        }
        for &(s, e) in &rb {
            count_b += (e - s).max(0);
        }
        for &(sa, ea) in &ra {
            for &(sb, eb) in &rb {
                count_both += (ea.min(eb) - sa.max(sb)).max(0);
            }
        }
    }
    let union = count_a + count_b - count_both;
    if union == 0 {
        return Err(GeomError::EmptyUnion);
    }
    Ok(count_both as f64 / union as f64)
}

/// Exact IoU when both quads are convex, pixel-counting otherwise.
pub fn iou(a: &Quad, b: &Quad) -> f64 {
    match iou_exact(a, b) {
        Ok(v) => v,
        Err(_) => iou_pixel(a, b, 1024).unwrap_or(0.0),
    }
}
