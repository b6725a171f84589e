//! Flag value parsers.

use oskgeom::codec::Roi;
use oskgeom::dataio::AngleLaw;
use oskgeom::evalkit::coco_thresholds;
use oskgeom::geom::Quad;

use crate::error::{CliError, Result};

fn numbers(s: &str, n: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    let vals: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals =
        vals.map_err(|_| format!("{what}: expected {n} comma-separated numbers, got {s:?}"))?;
    if vals.len() != n {
        return Err(format!("{what}: expected {n} numbers, got {}", vals.len()));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(format!("{what}: values must be finite"));
    }
    Ok(vals)
}

pub fn quad(s: &str) -> Result<Quad> {
    let v = numbers(s, 8, "quad").map_err(CliError::Usage)?;
    Ok(Quad::from_flat([
        v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7],
    ])?)
}

pub fn roi(s: &str) -> Result<Roi> {
    let v = numbers(s, 4, "roi").map_err(CliError::Usage)?;
    Ok(Roi::new(v[0], v[1], v[2], v[3])?)
}

pub fn angle_law(s: &str) -> std::result::Result<AngleLaw, String> {
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| format!("angle law {s:?}: expected kind:params"))?;
    let law = match kind {
        "uniform" => {
            let v = numbers(rest, 2, "uniform")?;
            AngleLaw::Uniform { lo: v[0], hi: v[1] }
        }
        "gapped" => {
            let v = numbers(rest, 4, "gapped")?;
            AngleLaw::Gapped {
                lo: v[0],
                hi: v[1],
                gap_lo: v[2],
                gap_hi: v[3],
            }
        }
        "peaked" => {
            let v = numbers(rest, 2, "peaked")?;
            AngleLaw::Peaked {
                center: v[0],
                width: v[1],
            }
        }
        other => return Err(format!("unknown angle law {other:?}")),
    };
    law.validate()?;
    Ok(law)
}

/// IoU threshold list for `--iou-thr`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(pub Vec<f64>);

pub fn thresholds(s: &str) -> std::result::Result<Thresholds, String> {
    if s == "coco" {
        return Ok(Thresholds(coco_thresholds()));
    }
    let vals: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| format!("bad threshold list {s:?}"))?;
    if vals.is_empty() || vals.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(format!("thresholds must lie in (0, 1): {s:?}"));
    }
    Ok(Thresholds(vals))
}
