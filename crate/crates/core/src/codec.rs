//! Orientation-sensitive keypoint heatmaps.
//!
//! A quad is rendered into eight `M × M` channels over an expanded ROI: one
//! per vertex and one per edge midpoint. Each channel is an anisotropic
//! Gaussian whose long axis follows the adjacent edge; a vertex carries two
//! of them (one per adjacent edge) combined by elementwise max, which gives
//! a cross-star footprint. Heatmap cell `(i, j)` is row `i`, column `j`, and
//! sits at continuous heatmap coordinate `(x, y) = (j, i)`.

use nalgebra::{Matrix4, Vector4};
use thiserror::Error;

use crate::geom::{keypoints_from_quad, GeomError, KeypointSet, Point2, Quad};

/// Number of keypoints per instance.
pub const NUM_KEYPOINTS: usize = 8;

pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;

/// Tolerance on heatmap values outside `[0, 1]` accepted by [`decode`].
pub const HEATMAP_RANGE_TOL: f64 = 1e-6;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("heatmap value {value} at index {index} is outside [0, 1]")]
    InvalidHeatmap { index: usize, value: f64 },
    #[error("malformed heatmap file: {0}")]
    Format(String),
}

/// Axis-aligned region of interest; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Roi {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, CodecError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(CodecError::InvalidRoi("non-finite value".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(CodecError::InvalidRoi(format!(
                "size {w}x{h} is not positive"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Tight axis-aligned box around the quad.
    pub fn bounding(q: &Quad) -> Result<Self, CodecError> {
        let (lo, hi) = q.bounds();
        Self::new(lo.x, lo.y, hi.x - lo.x, hi.y - lo.y)
    }
}

/// Grows the ROI about its center to `(1 + ratio)` times its size.
pub fn expand_roi(roi: &Roi, expansion_ratio: f64) -> Roi {
    let r = expansion_ratio;
    Roi {
        x: roi.x - r / 2.0 * roi.w,
        y: roi.y - r / 2.0 * roi.h,
        w: (1.0 + r) * roi.w,
        h: (1.0 + r) * roi.h,
    }
}

/// Image coordinates to heatmap coordinates on an (already expanded) ROI.
pub fn map_to_heatmap(p: Point2, expanded: &Roi, m: usize) -> Point2 {
    let m = m as f64;
    Point2::new(
        (p.x - expanded.x) * m / expanded.w,
        (p.y - expanded.y) * m / expanded.h,
    )
}

/// Inverse of [`map_to_heatmap`].
pub fn map_from_heatmap(p: Point2, expanded: &Roi, m: usize) -> Point2 {
    let m = m as f64;
    Point2::new(
        p.x * expanded.w / m + expanded.x,
        p.y * expanded.h / m + expanded.y,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMode {
    /// Orientation-sensitive: anisotropic, long axis along the edge.
    Osh,
    /// Standard isotropic Gaussian.
    Sgh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OshConfig {
    pub expansion_ratio: f64,
    pub heatmap_size: usize,
    /// Standard deviation across the edge, in heatmap cells.
    pub sigma: f64,
    /// Ratio of the along-edge to the across-edge standard deviation.
    pub aspect_scale: f64,
    pub mode: HeatmapMode,
}

impl Default for OshConfig {
    fn default() -> Self {
        Self {
            expansion_ratio: 0.25,
            heatmap_size: 56,
            sigma: 0.8,
            aspect_scale: 3.0,
            mode: HeatmapMode::Osh,
        }
    }
}

impl OshConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |msg: String| Err(CodecError::InvalidConfig(msg));
        if !(self.expansion_ratio.is_finite() && self.expansion_ratio >= 0.0) {
            return bad(format!(
                "expansion ratio {} must be >= 0",
                self.expansion_ratio
            ));
        }
        if self.heatmap_size < 8 || self.heatmap_size > u16::MAX as usize {
            return bad(format!(
                "heatmap size {} must be in [8, 65535]",
                self.heatmap_size
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma {} must be > 0", self.sigma));
        }
        if !(self.aspect_scale.is_finite() && self.aspect_scale >= 1.0) {
            return bad(format!("aspect scale {} must be >= 1", self.aspect_scale));
        }
        Ok(())
    }

    /// Aspect scale actually used: SGH is always isotropic.
    pub fn effective_aspect(&self) -> f64 {
        match self.mode {
            HeatmapMode::Osh => self.aspect_scale,
            HeatmapMode::Sgh => 1.0,
        }
    }
}

pub type Mat2 = [[f64; 2]; 2];

/// `Rᵀ Σ R` with `Σ = diag((aspect·σ)², σ²)` and `R` the rotation matrix
/// `[[cos θ, −sin θ], [sin θ, cos θ]]`.
///
/// The large-variance eigenvector of the result is `(cos θ, −sin θ)`.
pub fn rotate_covariance(sigma: f64, aspect_scale: f64, theta: f64) -> Mat2 {
    let a = (aspect_scale * sigma).powi(2);
    let b = sigma * sigma;
    let (s, c) = theta.sin_cos();
    let xx = a * c * c + b * s * s;
    let yy = a * s * s + b * c * c;
    let xy = (b - a) * s * c;
    [[xx, xy], [xy, yy]]
}

/// Covariance whose long axis points along direction `(cos θ, sin θ)` in the
/// heatmap frame.
pub fn edge_covariance(sigma: f64, aspect_scale: f64, theta: f64) -> Mat2 {
    rotate_covariance(sigma, aspect_scale, -theta)
}

/// Peak-normalized 2-D Gaussian: value 1 at the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Point2,
    inv: Mat2,
}

impl Gaussian2 {
    pub fn new(mean: Point2, cov: Mat2) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Self { mean, inv }
    }

    pub fn value_at(&self, p: Point2) -> f64 {
        let d = p - self.mean;
        let q = d.x * (self.inv[0][0] * d.x + self.inv[0][1] * d.y)
            + d.y * (self.inv[1][0] * d.x + self.inv[1][1] * d.y);
        (-0.5 * q).exp()
    }
}

/// Continuous response of one keypoint channel before grid sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeypointKernel {
    /// Max of the two edge-aligned Gaussians meeting at a vertex.
    Vertex([Gaussian2; 2]),
    Edge(Gaussian2),
}

impl KeypointKernel {
    pub fn mean(&self) -> Point2 {
        match self {
            KeypointKernel::Vertex(g) => g[0].mean,
            KeypointKernel::Edge(g) => g.mean,
        }
    }

    pub fn value_at(&self, p: Point2) -> f64 {
        match self {
            KeypointKernel::Vertex([a, b]) => a.value_at(p).max(b.value_at(p)),
            KeypointKernel::Edge(g) => g.value_at(p),
        }
    }
}

/// Kernels for a keypoint set already expressed in heatmap coordinates.
pub fn keypoint_kernels(kp: &KeypointSet, cfg: &OshConfig) -> [KeypointKernel; NUM_KEYPOINTS] {
    let aspect = cfg.effective_aspect();
    let gauss = |k: usize, theta: f64| {
        Gaussian2::new(kp.points[k], edge_covariance(cfg.sigma, aspect, theta))
    };
    std::array::from_fn(|k| {
        if k < 4 {
            let [t0, t1] = kp.vertex_angles[k];
            KeypointKernel::Vertex([gauss(k, t0), gauss(k, t1)])
        } else {
            KeypointKernel::Edge(gauss(k, kp.midpoint_angles[k - 4]))
        }
    })
}

/// `K` channels of `M × M` values, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    k: usize,
    m: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            data: vec![0.0; k * m * m],
        }
    }

    pub fn from_vec(k: usize, m: usize, data: Vec<f64>) -> Result<Self, CodecError> {
        if data.len() != k * m * m {
            return Err(CodecError::ShapeMismatch {
                expected: k * m * m,
                actual: data.len(),
            });
        }
        Ok(Self { k, m, data })
    }

    pub fn num_channels(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.m * self.m;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.m * self.m;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.m + i) * self.m + j]
    }

    /// Checks every value lies in `[0, 1]` up to [`HEATMAP_RANGE_TOL`].
    pub fn validate_range(&self) -> Result<(), CodecError> {
        for (index, &value) in self.data.iter().enumerate() {
            if !(-HEATMAP_RANGE_TOL..=1.0 + HEATMAP_RANGE_TOL).contains(&value) {
                return Err(CodecError::InvalidHeatmap { index, value });
            }
        }
        Ok(())
    }
}

/// Maps the quad into heatmap coordinates and derives its keypoints there.
pub fn heatmap_keypoints(q: &Quad, roi: &Roi, cfg: &OshConfig) -> Result<KeypointSet, CodecError> {
    let expanded = expand_roi(roi, cfg.expansion_ratio);
    let mapped = q.map(|p| map_to_heatmap(p, &expanded, cfg.heatmap_size))?;
    Ok(keypoints_from_quad(&mapped))
}

/// Renders the eight keypoint channels for `q` over the expanded `roi`.
///
/// Each channel is sampled on the integer grid and rescaled so its grid
/// maximum is exactly 1. Keypoints mapping outside `[0, M) × [0, M)` leave
/// their channel at zero.
pub fn encode(q: &Quad, roi: &Roi, cfg: &OshConfig) -> Result<Heatmap, CodecError> {
    cfg.validate()?;
    let m = cfg.heatmap_size;
    let kp = heatmap_keypoints(q, roi, cfg)?;
    let kernels = keypoint_kernels(&kp, cfg);
    let mut hm = Heatmap::zeros(NUM_KEYPOINTS, m);
    let limit = m as f64;
    for (k, kernel) in kernels.iter().enumerate() {
        let mu = kernel.mean();
        if !(mu.x >= 0.0 && mu.x < limit && mu.y >= 0.0 && mu.y < limit) {
            continue;
        }
        let channel = hm.channel_mut(k);
        let mut peak = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let v = kernel.value_at(Point2::new(j as f64, i as f64));
                channel[i * m + j] = v;
                peak = peak.max(v);
            }
        }
        if peak > 0.0 {
            for v in channel.iter_mut() {
                *v /= peak;
            }
        }
    }
    Ok(hm)
}

fn check_shape(logits: &[f64], target: &Heatmap) -> Result<(), CodecError> {
    if logits.len() != target.data.len() {
        return Err(CodecError::ShapeMismatch {
            expected: target.data.len(),
            actual: logits.len(),
        });
    }
    Ok(())
}

/// `ln(sigmoid(x))` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross entropy between `sigmoid(logits)` and the target.
/// Log terms are floored at `ln(1e-12)`.
pub fn bce_loss(logits: &[f64], target: &Heatmap) -> Result<f64, CodecError> {
    check_shape(logits, target)?;
    let floor = LOG_FLOOR.ln();
    let sum: f64 = logits
        .iter()
        .zip(&target.data)
        .map(|(&h, &t)| {
            let log_p = log_sigmoid(h).max(floor);
            let log_q = log_sigmoid(-h).max(floor);
            -t * log_p - (1.0 - t) * log_q
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the logits.
pub fn bce_grad(logits: &[f64], target: &Heatmap) -> Result<Vec<f64>, CodecError> {
    check_shape(logits, target)?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(&target.data)
        .map(|(&h, &t)| (sigmoid(h) - t) / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Argmax of a channel refined by the weighted centroid of its 3×3
/// neighborhood (clipped at the border). `None` below `score_floor`.
pub fn extract_peak(channel: &[f64], m: usize, score_floor: f64) -> Option<Peak> {
    debug_assert_eq!(channel.len(), m * m);
    let (best, &score) = channel.iter().enumerate().fold(
        None,
        |acc: Option<(usize, &f64)>, (idx, v)| match acc {
            Some((_, b)) if *v <= *b => acc,
            _ => Some((idx, v)),
        },
    )?;
    if score.is_nan() || score < score_floor {
        return None;
    }
    let (bi, bj) = (best / m, best % m);
    let (mut wsum, mut xsum, mut ysum) = (0.0, 0.0, 0.0);
    for i in bi.saturating_sub(1)..=(bi + 1).min(m - 1) {
        for j in bj.saturating_sub(1)..=(bj + 1).min(m - 1) {
            let w = channel[i * m + j].max(0.0);
            wsum += w;
            xsum += w * j as f64;
            ysum += w * i as f64;
        }
    }
    Some(Peak {
        x: xsum / wsum,
        y: ysum / wsum,
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub fuse_midpoints: bool,
    /// Weight of the midpoint consistency term.
    pub lambda: f64,
    pub score_floor: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            fuse_midpoints: true,
            lambda: 1.0,
            score_floor: DEFAULT_SCORE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub quad: Quad,
    /// Mean of the eight peak scores; missing peaks count as 0.
    pub score: f64,
}

/// Least-squares vertex refinement:
/// `min Σ‖v_k − v̂_k‖² + λ Σ‖m_k − (v_k + v_{k+1})/2‖²` over present midpoints.
pub fn fuse_midpoints(
    vertices: &[Point2; 4],
    midpoints: &[Option<Point2>; 4],
    lambda: f64,
) -> [Point2; 4] {
    let mut normal = Matrix4::<f64>::identity();
    let mut rhs_x = Vector4::from_iterator(vertices.iter().map(|p| p.x));
    let mut rhs_y = Vector4::from_iterator(vertices.iter().map(|p| p.y));
    for (k, mid) in midpoints.iter().enumerate() {
        let Some(mid) = mid else { continue };
        let l = (k + 1) % 4;
        for (a, b) in [(k, k), (k, l), (l, k), (l, l)] {
            normal[(a, b)] += lambda * 0.25;
        }
        rhs_x[k] += lambda * 0.5 * mid.x;
        rhs_x[l] += lambda * 0.5 * mid.x;
        rhs_y[k] += lambda * 0.5 * mid.y;
        rhs_y[l] += lambda * 0.5 * mid.y;
    }
    // normal = I + λ AᵀA is symmetric positive definite
    let chol = normal
        .cholesky()
        .expect("identity plus PSD is positive definite");
    let xs = chol.solve(&rhs_x);
    let ys = chol.solve(&rhs_y);
    std::array::from_fn(|k| Point2::new(xs[k], ys[k]))
}

/// Recovers the quad from its keypoint heatmap.
///
/// Returns `Ok(None)` when any vertex channel has no peak above the floor,
/// or when the recovered vertices do not form a valid quad.
pub fn decode(
    hm: &Heatmap,
    roi: &Roi,
    cfg: &OshConfig,
    dcfg: &DecodeConfig,
) -> Result<Option<Decoded>, CodecError> {
    let m = cfg.heatmap_size;
    if hm.m != m || hm.k != NUM_KEYPOINTS {
        return Err(CodecError::ShapeMismatch {
            expected: NUM_KEYPOINTS * m * m,
            actual: hm.data.len(),
        });
    }
    hm.validate_range()?;
    let expanded = expand_roi(roi, cfg.expansion_ratio);
    let peaks: [Option<Peak>; NUM_KEYPOINTS] =
        std::array::from_fn(|k| extract_peak(hm.channel(k), m, dcfg.score_floor));
    let score = peaks.iter().flatten().map(|p| p.score).sum::<f64>() / NUM_KEYPOINTS as f64;
    let to_image = |p: &Peak| map_from_heatmap(Point2::new(p.x, p.y), &expanded, m);

    let mut vertices = [Point2::default(); 4];
    for k in 0..4 {
        match &peaks[k] {
            Some(p) => vertices[k] = to_image(p),
            None => return Ok(None),
        }
    }
    if dcfg.fuse_midpoints {
        let mids: [Option<Point2>; 4] =
            std::array::from_fn(|k| peaks[4 + k].as_ref().map(to_image));
        vertices = fuse_midpoints(&vertices, &mids, dcfg.lambda);
    }
    Ok(Quad::new(vertices).ok().map(|quad| Decoded {
        quad,
        score: score.clamp(0.0, 1.0),
    }))
}

const OSKH_MAGIC: &[u8; 4] = b"OSKH";
const OSKH_VERSION: u8 = 1;

/// Serializes as `OSKH | u8 version | u8 K | u16 LE M | f32 LE values`.
pub fn to_oskh_bytes(hm: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + hm.data.len() * 4);
    out.extend_from_slice(OSKH_MAGIC);
    out.push(OSKH_VERSION);
    out.push(hm.k as u8);
    out.extend_from_slice(&(hm.m as u16).to_le_bytes());
    for &v in &hm.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn from_oskh_bytes(bytes: &[u8]) -> Result<Heatmap, CodecError> {
    let fmt = |s: &str| CodecError::Format(s.to_string());
    if bytes.len() < 8 {
        return Err(fmt("truncated header"));
    }
    if &bytes[..4] != OSKH_MAGIC {
        return Err(fmt("bad magic"));
    }
    if bytes[4] != OSKH_VERSION {
        return Err(CodecError::Format(format!(
            "unsupported version {}",
            bytes[4]
        )));
    }
    let k = bytes[5] as usize;
    let m = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != k * m * m * 4 {
        return Err(CodecError::Format(format!(
            "expected {} payload bytes, found {}",
            k * m * m * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Heatmap::from_vec(k, m, data)
}

/// Binary PGM (P5, maxval 255) of one channel, pixel = round(255·h).
pub fn channel_to_pgm(hm: &Heatmap, k: usize) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", hm.m, hm.m).into_bytes();
    out.extend(
        hm.channel(k)
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}
