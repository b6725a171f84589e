//! Rotated-detection evaluation: VOC-style greedy matching, average
//! precision (11-point and all-point), mAP over IoU thresholds, and rotated
//! non-maximum suppression.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::geom::{iou, Quad};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub quad: Quad,
    pub score: f64,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub quad: Quad,
    pub class_id: u32,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    Tp,
    Fp,
    /// Overlaps only a difficult ground truth; excluded from the PR curve.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMethod {
    #[default]
    Voc07,
    AllPoints,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Detection indices sorted by descending score, ties in input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Labels every detection (in input order) as TP, FP or ignored.
///
/// Detections are visited by descending score. Each claims the
/// highest-IoU unmatched, non-difficult ground truth of its image and class
/// with IoU ≥ `iou_thr`. Failing that, a detection overlapping a difficult
/// ground truth at ≥ `iou_thr` is ignored; otherwise it is a false positive.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Vec<MatchLabel> {
    let mut groups: HashMap<(&str, u32), Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        groups
            .entry((gt.image_id.as_str(), gt.class_id))
            .or_default()
            .push(g);
    }
    let mut matched = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::Fp; dets.len()];
    for d in score_order(dets) {
        let det = &dets[d];
        let Some(candidates) = groups.get(&(det.image_id.as_str(), det.class_id)) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        let mut hits_difficult = false;
        for &g in candidates {
            let gt = &gts[g];
            let v = iou(&det.quad, &gt.quad);
            if v < iou_thr {
                continue;
            }
            if gt.difficult {
                hits_difficult = true;
            } else if !matched[g] && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        labels[d] = match best {
            Some((g, _)) => {
                matched[g] = true;
                MatchLabel::Tp
            }
            None if hits_difficult => MatchLabel::Ignored,
            None => MatchLabel::Fp,
        };
    }
    labels
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall after each non-ignored detection, by descending score.
pub fn pr_curve(scored: &[(f64, MatchLabel)], num_gt: usize) -> Vec<PrPoint> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(scored.len());
    for i in order {
        match scored[i].1 {
            MatchLabel::Tp => tp += 1,
            MatchLabel::Fp => fp += 1,
            MatchLabel::Ignored => continue,
        }
        let recall = if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        };
        curve.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    curve
}

pub fn average_precision(scored: &[(f64, MatchLabel)], num_gt: usize, method: ApMethod) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let curve = pr_curve(scored, num_gt);
    ap_from_curve(&curve, method)
}

fn ap_from_curve(curve: &[PrPoint], method: ApMethod) -> f64 {
    match method {
        ApMethod::Voc07 => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let r = t as f64 / 10.0;
                let p = curve
                    .iter()
                    .filter(|pt| pt.recall >= r)
                    .map(|pt| pt.precision)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApMethod::AllPoints => {
            let mut recall = vec![0.0];
            let mut precision = vec![0.0];
            for pt in curve {
                recall.push(pt.recall);
                precision.push(pt.precision);
            }
            recall.push(1.0);
            precision.push(0.0);
            for i in (0..precision.len() - 1).rev() {
                precision[i] = precision[i].max(precision[i + 1]);
            }
            (1..recall.len())
                .filter(|&i| recall[i] != recall[i - 1])
                .map(|i| (recall[i] - recall[i - 1]) * precision[i])
                .sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class_id: u32,
    pub iou_thr: f64,
    pub ap: f64,
    pub num_gt: usize,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub method: ApMethod,
    pub thresholds: Vec<f64>,
    /// Ordered by threshold, then class id.
    pub per_class: Vec<ClassAp>,
    /// Mean over classes, one per threshold.
    pub map_per_threshold: Vec<f64>,
    /// Mean of `map_per_threshold`.
    pub map: f64,
}

impl EvalResult {
    pub fn map_at(&self, iou_thr: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - iou_thr).abs() < 1e-12)
            .map(|i| self.map_per_threshold[i])
    }

    /// `class,iou_thr,ap` rows, then one `mAP,<thr>,<value>` row per
    /// threshold and a final `mAP,all,<value>` summary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou_thr,ap\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{:.2},{:.9}", c.class_id, c.iou_thr, c.ap);
        }
        for (t, m) in self.thresholds.iter().zip(&self.map_per_threshold) {
            let _ = writeln!(out, "mAP,{t:.2},{m:.9}");
        }
        let _ = writeln!(out, "mAP,all,{:.9}", self.map);
        out
    }
}

/// AP per class per threshold and the aggregate mAP.
///
/// Classes are those with at least one non-difficult ground truth. With no
/// such class the mAP is 0.
pub fn map_over_thresholds(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
    method: ApMethod,
) -> EvalResult {
    let classes: BTreeSet<u32> = gts
        .iter()
        .filter(|g| !g.difficult)
        .map(|g| g.class_id)
        .collect();
    let mut per_class = Vec::new();
    let mut map_per_threshold = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let labels = match_detections(dets, gts, thr);
        let mut sum = 0.0;
        for &class_id in &classes {
            let num_gt = gts
                .iter()
                .filter(|g| g.class_id == class_id && !g.difficult)
                .count();
            let scored: Vec<(f64, MatchLabel)> = dets
                .iter()
                .zip(&labels)
                .filter(|(d, _)| d.class_id == class_id)
                .map(|(d, &l)| (d.score, l))
                .collect();
            let curve = pr_curve(&scored, num_gt);
            let ap = ap_from_curve(&curve, method);
            sum += ap;
            per_class.push(ClassAp {
                class_id,
                iou_thr: thr,
                ap,
                num_gt,
                curve,
            });
        }
        map_per_threshold.push(if classes.is_empty() {
            0.0
        } else {
            sum / classes.len() as f64
        });
    }
    let map = if map_per_threshold.is_empty() {
        0.0
    } else {
        map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64
    };
    EvalResult {
        method,
        thresholds: thresholds.to_vec(),
        per_class,
        map_per_threshold,
        map,
    }
}

/// Greedy rotated NMS per class. Kept detections are returned by
/// descending score (ties in input order).
pub fn rotated_nms(dets: &[Detection], nms_thr: f64) -> Vec<Detection> {
    let mut kept: Vec<&Detection> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept.iter().any(|k| {
            k.class_id == d.class_id && k.image_id == d.image_id && iou(&k.quad, &d.quad) >= nms_thr
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}
