//! Annotation parsing, dataset files and seeded synthetic scenes.
//!
//! DOTA rows are `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`. The dataset
//! file adds a `oskgeom-dataset v1` header and an optional trailing image id
//! token per row. Detection files hold
//! `image_id class_id score x1 y1 x2 y2 x3 y3 x4 y4` per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::evalkit::{Detection, GroundTruth};
use crate::geom::{Point2, Quad};
use crate::rng::SplitMix64;

pub const DATASET_HEADER: &str = "oskgeom-dataset v1";

/// Image id given to rows that carry none.
pub const DEFAULT_IMAGE_ID: &str = "0";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub quad: Quad,
    pub category: String,
    pub difficult: bool,
}

/// An annotation tagged with the image it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub image_id: String,
    pub record: AnnotationRecord,
}

/// Formats with 9 significant digits as plain decimal (scientific notation
/// only for very large or very small magnitudes), trailing zeros trimmed.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    if !(-10..=15).contains(&exp) {
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        return format!("{sign}{mant}e{exp}");
    }
    let (int_part, frac_part) = if exp >= 0 {
        let split = exp as usize + 1;
        if split >= digits.len() {
            (
                format!("{digits}{}", "0".repeat(split - digits.len())),
                String::new(),
            )
        } else {
            (digits[..split].to_string(), digits[split..].to_string())
        }
    } else {
        (
            "0".to_string(),
            format!("{}{digits}", "0".repeat((-exp - 1) as usize)),
        )
    };
    let frac_part = frac_part.trim_end_matches('0');
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}

/// Value after a write/read cycle through [`fmt_sig9`].
pub fn round_sig9(v: f64) -> f64 {
    fmt_sig9(v).parse().unwrap_or(v)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, DataError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value: {tok:?}")));
    }
    Ok(v)
}

fn parse_quad(tokens: &[&str], line: usize) -> Result<Quad, DataError> {
    let mut c = [0.0; 8];
    for (slot, tok) in c.iter_mut().zip(tokens) {
        *slot = parse_f64(tok, line)?;
    }
    Quad::from_flat(c).map_err(|e| parse_err(line, e.to_string()))
}

fn parse_annotation(tokens: &[&str], line: usize) -> Result<AnnotationRecord, DataError> {
    let quad = parse_quad(&tokens[..8], line)?;
    let category = tokens[8].to_string();
    let difficult = match tokens[9] {
        "0" => false,
        "1" => true,
        other => {
            return Err(parse_err(
                line,
                format!("difficult flag must be 0 or 1, got {other:?}"),
            ))
        }
    };
    Ok(AnnotationRecord {
        quad,
        category,
        difficult,
    })
}

fn is_metadata(line: &str) -> bool {
    line.starts_with("imagesource") || line.starts_with("gsd")
}

/// Parses DOTA annotation text. Metadata and blank lines are skipped.
/// Line numbers in errors are 1-based.
pub fn parse_dota(text: &str) -> Result<Vec<AnnotationRecord>, DataError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || is_metadata(line) {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 10 {
            return Err(parse_err(
                idx + 1,
                format!("expected 10 tokens, found {}", tokens.len()),
            ));
        }
        out.push(parse_annotation(&tokens, idx + 1)?);
    }
    Ok(out)
}

fn write_quad(out: &mut String, q: &Quad) {
    for (i, v) in q.to_flat().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_sig9(*v));
    }
}

/// DOTA text for a list of records (no metadata lines).
pub fn serialize_dota(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        write_quad(&mut out, &r.quad);
        let _ = writeln!(out, " {} {}", r.category, u8::from(r.difficult));
    }
    out
}

pub fn serialize_dataset(records: &[LabeledRecord]) -> String {
    let mut out = format!("{DATASET_HEADER}\n");
    for r in records {
        write_quad(&mut out, &r.record.quad);
        let _ = writeln!(
            out,
            " {} {} {}",
            r.record.category,
            u8::from(r.record.difficult),
            r.image_id
        );
    }
    out
}

/// Parses a dataset file. Rows may omit the image id, in which case
/// [`DEFAULT_IMAGE_ID`] is used.
pub fn parse_dataset(text: &str) -> Result<Vec<LabeledRecord>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DATASET_HEADER => {}
        _ => return Err(parse_err(1, format!("missing header {DATASET_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let image_id = match tokens.len() {
            10 => DEFAULT_IMAGE_ID.to_string(),
            11 => tokens[10].to_string(),
            n => {
                return Err(parse_err(
                    idx + 1,
                    format!("expected 10 or 11 tokens, found {n}"),
                ))
            }
        };
        let record = parse_annotation(&tokens[..10], idx + 1)?;
        out.push(LabeledRecord { image_id, record });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[LabeledRecord]) -> Result<(), DataError> {
    std::fs::write(path, serialize_dataset(records))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledRecord>, DataError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// Reads either a dataset file (by header) or a bare DOTA file, whose
/// records are assigned the file stem as image id.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<LabeledRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if text.lines().next().map(str::trim) == Some(DATASET_HEADER) {
        return parse_dataset(&text);
    }
    let image_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(DEFAULT_IMAGE_ID)
        .to_string();
    Ok(parse_dota(&text)?
        .into_iter()
        .map(|record| LabeledRecord {
            image_id: image_id.clone(),
            record,
        })
        .collect())
}

/// Category name to class id: numeric names map to themselves, others to
/// `max numeric id + 1 + rank` in sorted order.
pub fn class_ids(records: &[LabeledRecord]) -> BTreeMap<String, u32> {
    let mut map = BTreeMap::new();
    let mut named = Vec::new();
    for r in records {
        match r.record.category.parse::<u32>() {
            Ok(id) => {
                map.insert(r.record.category.clone(), id);
            }
            Err(_) => named.push(r.record.category.clone()),
        }
    }
    named.sort();
    named.dedup();
    let base = map.values().max().map_or(0, |m| m + 1);
    for (rank, name) in named.into_iter().enumerate() {
        map.insert(name, base + rank as u32);
    }
    map
}

pub fn to_ground_truths(records: &[LabeledRecord]) -> Vec<GroundTruth> {
    let ids = class_ids(records);
    records
        .iter()
        .map(|r| GroundTruth {
            image_id: r.image_id.clone(),
            quad: r.record.quad,
            class_id: ids[&r.record.category],
            difficult: r.record.difficult,
        })
        .collect()
}

pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let _ = write!(out, "{} {} {} ", d.image_id, d.class_id, fmt_sig9(d.score));
        write_quad(&mut out, &d.quad);
        out.push('\n');
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>, DataError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let n = idx + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 11 {
            return Err(parse_err(
                n,
                format!("expected 11 tokens, found {}", tokens.len()),
            ));
        }
        let class_id = tokens[1]
            .parse::<u32>()
            .map_err(|_| parse_err(n, format!("bad class id {:?}", tokens[1])))?;
        let score = parse_f64(tokens[2], n)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse_err(n, format!("score {score} outside [0, 1]")));
        }
        let quad = parse_quad(&tokens[3..], n)?;
        out.push(Detection {
            image_id: tokens[0].to_string(),
            quad,
            score,
            class_id,
        });
    }
    Ok(out)
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<(), DataError> {
    std::fs::write(path, serialize_detections(dets))?;
    Ok(())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, DataError> {
    parse_detections(&std::fs::read_to_string(path)?)
}

/// Distribution of first-edge angles in degrees; samples are folded into
/// `[0, 90)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleLaw {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Uniform over `[lo, hi)` with `[gap_lo, gap_hi)` removed.
    Gapped {
        lo: f64,
        hi: f64,
        gap_lo: f64,
        gap_hi: f64,
    },
    /// Triangular on `[center - width, center + width]`.
    Peaked {
        center: f64,
        width: f64,
    },
}

impl AngleLaw {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            AngleLaw::Uniform { lo, hi } => lo < hi,
            AngleLaw::Gapped {
                lo,
                hi,
                gap_lo,
                gap_hi,
            } => {
                lo < hi && gap_lo <= gap_hi && (gap_lo - lo).max(0.0) + (hi - gap_hi).max(0.0) > 0.0
            }
            AngleLaw::Peaked { width, .. } => width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid angle law {self:?}"))
        }
    }

    /// Raw sample before folding.
    fn sample_raw(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            AngleLaw::Uniform { lo, hi } => rng.uniform(lo, hi),
            AngleLaw::Gapped {
                lo,
                hi,
                gap_lo,
                gap_hi,
            } => {
                let gl = gap_lo.clamp(lo, hi);
                let gh = gap_hi.clamp(lo, hi);
                let u = rng.uniform(0.0, (gl - lo) + (hi - gh));
                if u < gl - lo {
                    lo + u
                } else {
                    gh + (u - (gl - lo))
                }
            }
            AngleLaw::Peaked { center, width } => {
                let u = rng.next_f64();
                let t = if u < 0.5 {
                    (2.0 * u).sqrt() - 1.0
                } else {
                    1.0 - (2.0 * (1.0 - u)).sqrt()
                };
                center + width * t
            }
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        let a = self.sample_raw(rng).rem_euclid(90.0);
        if a >= 90.0 {
            0.0
        } else {
            a
        }
    }

    /// Probability that a folded sample lands in `[a, b)` with
    /// `0 <= a <= b <= 90`.
    pub fn probability(&self, a: f64, b: f64) -> f64 {
        // integrate the raw CDF over every 90° image of [a, b)
        let (lo, hi) = self.support();
        let k0 = (lo / 90.0).floor() as i64 - 1;
        let k1 = (hi / 90.0).ceil() as i64 + 1;
        (k0..=k1)
            .map(|k| self.raw_cdf(b + 90.0 * k as f64) - self.raw_cdf(a + 90.0 * k as f64))
            .sum()
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            AngleLaw::Uniform { lo, hi } | AngleLaw::Gapped { lo, hi, .. } => (lo, hi),
            AngleLaw::Peaked { center, width } => (center - width, center + width),
        }
    }

    fn raw_cdf(&self, x: f64) -> f64 {
        match *self {
            AngleLaw::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            AngleLaw::Gapped {
                lo,
                hi,
                gap_lo,
                gap_hi,
            } => {
                let gl = gap_lo.clamp(lo, hi);
                let gh = gap_hi.clamp(lo, hi);
                let total = (gl - lo) + (hi - gh);
                let mass = (x.min(gl) - lo).max(0.0) + (x.min(hi) - gh).max(0.0);
                (mass / total).clamp(0.0, 1.0)
            }
            AngleLaw::Peaked { center, width } => {
                let t = ((x - center) / width).clamp(-1.0, 1.0);
                if t < 0.0 {
                    (1.0 + t).powi(2) / 2.0
                } else {
                    1.0 - (1.0 - t).powi(2) / 2.0
                }
            }
        }
    }
}

/// Synthetic detection scores: `clamp(1 - penalty · mean |jitter| + noise)`
/// with Gaussian noise of `noise_std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreLaw {
    pub jitter_penalty: f64,
    pub noise_std: f64,
}

impl Default for ScoreLaw {
    fn default() -> Self {
        Self {
            jitter_penalty: 0.1,
            noise_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub angle_law: AngleLaw,
    /// Long side length range in pixels.
    pub size_range: (f64, f64),
    /// Long-to-short side ratio range.
    pub aspect_range: (f64, f64),
    /// Per-coordinate Gaussian noise std (pixels) for detections.
    pub jitter: f64,
    pub score_law: ScoreLaw,
    pub num_images: usize,
    pub num_classes: u32,
    pub image_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            count: 500,
            angle_law: AngleLaw::Uniform { lo: 0.0, hi: 90.0 },
            size_range: (20.0, 120.0),
            aspect_range: (1.0, 4.0),
            jitter: 1.5,
            score_law: ScoreLaw::default(),
            num_images: 10,
            num_classes: 3,
            image_size: 1024.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.angle_law.validate()?;
        let (s0, s1) = self.size_range;
        let (a0, a1) = self.aspect_range;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(format!(
                "size range ({s0}, {s1}) must satisfy 0 < min <= max"
            ));
        }
        if !(a0 >= 1.0 && a0 <= a1) {
            return Err(format!(
                "aspect range ({a0}, {a1}) must satisfy 1 <= min <= max"
            ));
        }
        if self.count == 0 || self.num_images == 0 || self.num_classes == 0 {
            return Err("count, image count and class count must be positive".into());
        }
        if self.jitter.is_nan()
            || self.jitter < 0.0
            || self.image_size.is_nan()
            || self.image_size <= s1 * 2.0
        {
            return Err("jitter must be >= 0 and images must fit the largest box".into());
        }
        Ok(())
    }
}

/// Rectangle rotated by `angle_deg` (clockwise on screen), vertices in
/// clockwise order. Its first-edge angle is `angle_deg` for angles in
/// `(0, 90)`.
pub fn rotated_rect(center: Point2, long: f64, short: f64, angle_deg: f64) -> Quad {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (hw, hh) = (long / 2.0, short / 2.0);
    let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    Quad::new(corners.map(|(x, y)| Point2::new(center.x + x * c - y * s, center.y + x * s + y * c)))
        .expect("positive-size rectangle is a valid quad")
}

/// Random convex quad around `center`: four points on a jittered, rotated
/// ellipse of semi-axes up to `scale`, with polar angles at least 20° apart.
/// Vertices are returned clockwise on screen.
pub fn random_convex_quad(rng: &mut SplitMix64, center: Point2, scale: f64) -> Quad {
    use std::f64::consts::{PI, TAU};
    loop {
        let mut angles = [0.0; 4];
        for a in angles.iter_mut() {
            *a = rng.uniform(0.0, TAU);
        }
        angles.sort_by(f64::total_cmp);
        let separated = (0..4).all(|k| {
            let next = if k == 3 {
                angles[0] + TAU
            } else {
                angles[k + 1]
            };
            next - angles[k] > 0.35
        });
        if !separated {
            continue;
        }
        let ax = scale * rng.uniform(0.4, 1.0);
        let ay = scale * rng.uniform(0.4, 1.0);
        let (s, c) = rng.uniform(0.0, PI).sin_cos();
        let pts = angles.map(|a| {
            let r = rng.uniform(0.8, 1.0);
            let (x, y) = (ax * r * a.cos(), ay * r * a.sin());
            Point2::new(center.x + x * c - y * s, center.y + x * s + y * c)
        });
        if let Ok(q) = Quad::new(pts) {
            if q.is_convex() && q.area() > 0.05 * scale * scale {
                return q.to_clockwise();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub ground_truths: Vec<LabeledRecord>,
    pub detections: Vec<Detection>,
    /// Drawn first-edge angle for each ground truth, in degrees.
    pub angles: Vec<f64>,
}

/// Generates a deterministic scene; the same config always yields the same
/// records in the same order. Coordinates are rounded to 9 significant
/// digits so the scene equals its serialized form.
pub fn synth_dataset(cfg: &SynthConfig) -> SynthScene {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut ground_truths = Vec::with_capacity(cfg.count);
    let mut detections = Vec::with_capacity(cfg.count);
    let mut angles = Vec::with_capacity(cfg.count);
    let margin = cfg.size_range.1;
    for _ in 0..cfg.count {
        let angle = cfg.angle_law.sample(&mut rng);
        let long = rng.uniform(cfg.size_range.0, cfg.size_range.1);
        let aspect = rng.uniform(cfg.aspect_range.0, cfg.aspect_range.1);
        let center = Point2::new(
            rng.uniform(margin, cfg.image_size - margin),
            rng.uniform(margin, cfg.image_size - margin),
        );
        let image = rng.below(cfg.num_images as u64);
        let class_id = rng.below(cfg.num_classes as u64) as u32;
        let quad = rotated_rect(center, long, long / aspect, angle);
        let quad = Quad::from_flat(quad.to_flat().map(round_sig9)).unwrap_or(quad);
        let image_id = format!("img{image:04}");

        // jitter until the detection is still a valid quad
        let (det_quad, mean_jitter) = loop {
            let mut c = quad.to_flat();
            let mut total = 0.0;
            for v in c.iter_mut() {
                let n = cfg.jitter * rng.normal();
                total += n.abs();
                *v = round_sig9(*v + n);
            }
            if let Ok(q) = Quad::from_flat(c) {
                break (q, total / 8.0);
            }
        };
        let noise = cfg.score_law.noise_std * rng.normal();
        let score =
            round_sig9((1.0 - cfg.score_law.jitter_penalty * mean_jitter + noise).clamp(0.0, 1.0));

        angles.push(angle);
        ground_truths.push(LabeledRecord {
            image_id: image_id.clone(),
            record: AnnotationRecord {
                quad,
                category: class_id.to_string(),
                difficult: false,
            },
        });
        detections.push(Detection {
            image_id,
            quad: det_quad,
            score,
            class_id,
        });
    }
    SynthScene {
        ground_truths,
        detections,
        angles,
    }
}
