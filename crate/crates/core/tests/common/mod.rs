#![allow(dead_code)]

use oskgeom::geom::Point2;

/// Rigid transform: rotation by `angle` about the origin, then translation.
pub fn rigid(p: Point2, angle: f64, t: Point2) -> Point2 {
    let (s, c) = angle.sin_cos();
    Point2::new(p.x * c - p.y * s + t.x, p.x * s + p.y * c + t.y)
}

/// Nearest-rank percentile (`q` in `[0, 1]`); sorts in place.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() as f64 - 1.0) * q).ceil() as usize;
    values[idx.min(values.len() - 1)]
}
