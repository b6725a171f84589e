//! Deterministic attention geometry: rotation-aware sampling patterns and
//! multi-path feature fusion masks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::NUM_KEYPOINTS;

/// Side length of the fusion grid over the ROI.
pub const GRID_N: usize = 3;

pub const DEFAULT_ARM_LEN: u32 = 4;
pub const DEFAULT_PTS_PER_ARM: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("threshold must be within [0, 90), got {0}")]
    InvalidThreshold(f64),
    #[error("keypoint index {0} out of range")]
    KeypointIndex(usize),
    #[error("mask for keypoint {0} is empty")]
    EmptyMask(usize),
}

/// Sampling offsets in heatmap cells, relative to the keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPattern {
    pub offsets: Vec<(f64, f64)>,
}

impl SamplingPattern {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `dx,dy` CSV with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dx,dy\n");
        for (dx, dy) in &self.offsets {
            let _ = writeln!(out, "{dx:.9},{dy:.9}");
        }
        out
    }
}

/// Unit direction of `angle`, with components below machine epsilon set to
/// zero so axis-aligned arms land exactly on the axes.
fn direction(angle: f64) -> (f64, f64) {
    let snap = |v: f64| if v.abs() < f64::EPSILON { 0.0 } else { v };
    let (s, c) = angle.sin_cos();
    (snap(s), snap(c))
}

fn push_arm(offsets: &mut Vec<(f64, f64)>, angle: f64, arm_len: u32, pts_per_arm: u32) {
    let (s, c) = direction(angle);
    let step = arm_len as f64 / pts_per_arm as f64;
    for n in 1..=pts_per_arm {
        let d = step * n as f64;
        // adding 0.0 folds -0.0 into +0.0
        offsets.push((d * c + 0.0, d * s + 0.0));
        offsets.push((-d * c + 0.0, -d * s + 0.0));
    }
}

/// Cross-star pattern at a vertex: the center plus two arms per edge
/// direction, `4·pts_per_arm + 1` points.
pub fn rcn_pattern_vertex(angles: [f64; 2], arm_len: u32, pts_per_arm: u32) -> SamplingPattern {
    let mut offsets = vec![(0.0, 0.0)];
    for a in angles {
        push_arm(&mut offsets, a, arm_len, pts_per_arm);
    }
    SamplingPattern { offsets }
}

/// Straight pattern along an edge, `2·pts_per_arm + 1` points.
pub fn rcn_pattern_edge(angle: f64, arm_len: u32, pts_per_arm: u32) -> SamplingPattern {
    let mut offsets = vec![(0.0, 0.0)];
    push_arm(&mut offsets, angle, arm_len, pts_per_arm);
    SamplingPattern { offsets }
}

/// Patterns for all eight keypoints of a keypoint set.
pub fn rcn_patterns(
    kp: &crate::geom::KeypointSet,
    arm_len: u32,
    pts_per_arm: u32,
) -> Vec<SamplingPattern> {
    (0..NUM_KEYPOINTS)
        .map(|k| {
            if k < 4 {
                rcn_pattern_vertex(kp.vertex_angles[k], arm_len, pts_per_arm)
            } else {
                rcn_pattern_edge(kp.midpoint_angles[k - 4], arm_len, pts_per_arm)
            }
        })
        .collect()
}

/// One binary `N × N` mask per keypoint, stored as `mask[k][row][col]`
/// with 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: [[[bool; GRID_N]; GRID_N]; NUM_KEYPOINTS],
}

impl MaskSet {
    /// Builds masks from 1-based `(row, col)` cell lists.
    pub fn from_cells(cells: &[Vec<(usize, usize)>; NUM_KEYPOINTS]) -> Result<Self, AttnError> {
        let mut masks = [[[false; GRID_N]; GRID_N]; NUM_KEYPOINTS];
        for (k, list) in cells.iter().enumerate() {
            if list.is_empty() {
                return Err(AttnError::EmptyMask(k));
            }
            for &(r, c) in list {
                if !(1..=GRID_N).contains(&r) || !(1..=GRID_N).contains(&c) {
                    return Err(AttnError::ShapeMismatch(format!(
                        "cell ({r}, {c}) outside grid"
                    )));
                }
                masks[k][r - 1][c - 1] = true;
            }
        }
        Ok(Self { masks })
    }

    pub fn coefficient(&self, k: usize, row: usize, col: usize) -> bool {
        self.masks[k][row][col]
    }

    /// Sorted 1-based `(row, col)` cells of mask `k`.
    pub fn cells(&self, k: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..GRID_N {
            for c in 0..GRID_N {
                if self.masks[k][r][c] {
                    out.push((r + 1, c + 1));
                }
            }
        }
        out
    }

    /// All masks as labelled 3×3 grids of 0/1.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in 0..NUM_KEYPOINTS {
            let _ = writeln!(out, "p{k}");
            for row in &self.masks[k] {
                let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }
}

/// Rotates a 1-based cell by 90° clockwise `times` times.
fn rotate_cell((r, c): (usize, usize), times: usize) -> (usize, usize) {
    (0..times % 4).fold((r, c), |(r, c), _| (c, GRID_N + 1 - r))
}

/// Strip of cells along side `k` (0 top, 1 right, 2 bottom, 3 left).
fn side_strip(k: usize) -> Vec<(usize, usize)> {
    (1..=GRID_N).map(|t| rotate_cell((1, t), k)).collect()
}

/// Default masks for a clockwise canonical order whose first vertex sits in
/// the top-left triangle of the ROI (reorder threshold near 44°).
///
/// Vertex `k` takes the top-left triangle rotated by `k·90°` clockwise.
/// Midpoint `4 + k` takes the strip along side `k` plus the center cell.
pub fn mff_masks(threshold_deg: f64) -> Result<MaskSet, AttnError> {
    if !threshold_deg.is_finite() || !(0.0..90.0).contains(&threshold_deg) {
        return Err(AttnError::InvalidThreshold(threshold_deg));
    }
    let top_left = [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (3, 1)];
    let center = (GRID_N / 2 + 1, GRID_N / 2 + 1);
    let cells: [Vec<(usize, usize)>; NUM_KEYPOINTS] = std::array::from_fn(|k| {
        if k < 4 {
            top_left.iter().map(|&cell| rotate_cell(cell, k)).collect()
        } else {
            let mut strip = side_strip(k - 4);
            strip.push(center);
            strip
        }
    });
    MaskSet::from_cells(&cells)
}

/// `C × H × W` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, AttnError> {
        if values.len() != channels * height * width {
            return Err(AttnError::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// Fuses local features into the global grid for keypoint `k`:
/// `F = Σ c_k(i, j) · L(i, j) + G`.
pub fn mff_fuse(
    global: &FeatureGrid,
    locals: &[[FeatureGrid; GRID_N]; GRID_N],
    masks: &MaskSet,
    k: usize,
) -> Result<FeatureGrid, AttnError> {
    if k >= NUM_KEYPOINTS {
        return Err(AttnError::KeypointIndex(k));
    }
    let mut out = global.clone();
    for (r, row) in locals.iter().enumerate() {
        for (c, local) in row.iter().enumerate() {
            if !local.same_shape(global) {
                return Err(AttnError::ShapeMismatch(format!(
                    "local ({}, {}) differs from global",
                    r + 1,
                    c + 1
                )));
            }
            if masks.coefficient(k, r, c) {
                for (o, v) in out.values.iter_mut().zip(&local.values) {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}
