//! Canonical vertex ordering around a minimum-confusion angle interface.
//!
//! Annotators label rotated boxes starting from an arbitrary vertex. The
//! canonical order picks the top vertex, measures the inclination of the
//! edge towards its predecessor, and decides on which side of a threshold
//! angle the box falls. Boxes near 0°/90° then get one consistent order,
//! and the ambiguous switch moves to the threshold, which should be placed
//! where the dataset has the fewest instances.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::Quad;

/// Angle reported for a vertical first edge: it sits just below 90° so it
/// falls in bin 89 and always exceeds any valid threshold.
pub const VERTICAL_ANGLE_DEG: f64 = 89.999_999_999_999_99;

pub const NUM_BINS: usize = 90;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReorderError {
    #[error("threshold must be finite and within [0, 90), got {0}")]
    InvalidThreshold(f64),
    #[error("angle histogram is empty")]
    EmptyHistogram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReorderConfig {
    threshold_deg: f64,
}

impl ReorderConfig {
    pub fn new(threshold_deg: f64) -> Result<Self, ReorderError> {
        if !threshold_deg.is_finite() || !(0.0..90.0).contains(&threshold_deg) {
            return Err(ReorderError::InvalidThreshold(threshold_deg));
        }
        Ok(Self { threshold_deg })
    }

    pub fn threshold_deg(&self) -> f64 {
        self.threshold_deg
    }
}

impl Default for ReorderConfig {
    fn default() -> Self {
        Self {
            threshold_deg: 44.0,
        }
    }
}

/// Input indices listed in clockwise (screen) order, starting at vertex 0.
fn clockwise_indices(q: &Quad) -> [usize; 4] {
    if q.is_clockwise() {
        [0, 1, 2, 3]
    } else {
        [0, 3, 2, 1]
    }
}

/// Returns the top vertex as a position in the clockwise order, and the
/// folded inclination of its edge to the clockwise predecessor.
fn top_vertex(q: &Quad) -> ([usize; 4], usize, f64) {
    let cw = clockwise_indices(q);
    let v = |j: usize| q.vertex(cw[j % 4]);

    let mut i = 0;
    for j in 1..4 {
        let (p, best) = (v(j), v(i));
        if p.y < best.y || (p.y == best.y && p.x < best.x) {
            i = j;
        }
    }
    if v(i).y == v(i + 3).y {
        i = (i + 3) % 4;
    }

    let (cur, prev) = (v(i), v(i + 3));
    let dx = cur.x - prev.x;
    let dy = cur.y - prev.y;
    let angle = if dx == 0.0 {
        VERTICAL_ANGLE_DEG
    } else {
        let a = (dy / dx).atan().to_degrees();
        let a = if a < 0.0 { a + 90.0 } else { a };
        if a >= 90.0 {
            VERTICAL_ANGLE_DEG
        } else {
            a
        }
    };
    (cw, i, angle)
}

/// Index (into the input vertex list) of the top vertex, and the inclination
/// of its first edge folded into `[0°, 90°)`.
pub fn first_edge_angle(q: &Quad) -> (usize, f64) {
    let (cw, i, angle) = top_vertex(q);
    (cw[i], angle)
}

/// Cyclically shifts the vertices into canonical order.
///
/// The start vertex is chosen on the clockwise traversal; the output keeps
/// the input's own traversal direction.
pub fn reorder_keypoints(q: &Quad, cfg: &ReorderConfig) -> Quad {
    let (cw, i, angle) = top_vertex(q);
    let start = if angle > cfg.threshold_deg {
        cw[i]
    } else {
        cw[(i + 1) % 4]
    };
    q.rotated_start(start)
}

/// Counts of first-edge angles in 1° bins over `[0°, 90°)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngleHistogram {
    pub bins: [u64; NUM_BINS],
    pub total: u64,
}

impl Default for AngleHistogram {
    fn default() -> Self {
        Self {
            bins: [0; NUM_BINS],
            total: 0,
        }
    }
}

impl AngleHistogram {
    pub fn add(&mut self, q: &Quad) {
        let (_, angle) = first_edge_angle(q);
        let bin = (angle.floor() as usize).min(NUM_BINS - 1);
        self.bins[bin] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &AngleHistogram) {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
        self.total += other.total;
    }

    /// `bin_deg,count` CSV with a header and one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_deg,count\n");
        for (deg, count) in self.bins.iter().enumerate() {
            let _ = writeln!(out, "{deg},{count}");
        }
        out
    }
}

pub fn angle_histogram<'a>(dataset: impl IntoIterator<Item = &'a Quad>) -> AngleHistogram {
    let mut h = AngleHistogram::default();
    for q in dataset {
        h.add(q);
    }
    h
}

/// Lower edge of the least-populated bin; ties go to the smallest bin.
pub fn select_min_confusion_threshold(h: &AngleHistogram) -> Result<u32, ReorderError> {
    if h.total == 0 {
        return Err(ReorderError::EmptyHistogram);
    }
    let mut best = 0;
    for (k, &c) in h.bins.iter().enumerate() {
        if c < h.bins[best] {
            best = k;
        }
    }
    Ok(best as u32)
}
