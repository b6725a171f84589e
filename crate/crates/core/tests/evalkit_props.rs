use oskgeom::dataio::{random_convex_quad, synth_dataset, to_ground_truths, SynthConfig};
use oskgeom::evalkit::{
    average_precision, coco_thresholds, map_over_thresholds, match_detections, rotated_nms,
    ApMethod, Detection, GroundTruth, MatchLabel,
};
use oskgeom::geom::{iou, Point2, Quad};
use oskgeom::rng::SplitMix64;

/// Greedy matching written as a plain double loop over all pairs.
fn brute_force_labels(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<MatchLabel> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable insertion sort by descending score
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j - 1]].score < dets[order[j]].score {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut taken = vec![false; gts.len()];
    let mut out = vec![MatchLabel::Fp; dets.len()];
    for &d in &order {
        let mut best = None;
        let mut best_iou = -1.0;
        let mut difficult_hit = false;
        for g in 0..gts.len() {
            if gts[g].image_id != dets[d].image_id || gts[g].class_id != dets[d].class_id {
                continue;
            }
            let v = iou(&dets[d].quad, &gts[g].quad);
            if v >= thr && gts[g].difficult {
                difficult_hit = true;
            }
            if v >= thr && !gts[g].difficult && !taken[g] && v > best_iou {
                best_iou = v;
                best = Some(g);
            }
        }
        if let Some(g) = best {
            taken[g] = true;
            out[d] = MatchLabel::Tp;
        } else if difficult_hit {
            out[d] = MatchLabel::Ignored;
        }
    }
    out
}

/// 11-point interpolated AP from labels, computed from scratch.
fn brute_force_voc07(scored: &[(f64, MatchLabel)], num_gt: usize) -> f64 {
    let mut s: Vec<(f64, MatchLabel)> = scored
        .iter()
        .copied()
        .filter(|x| x.1 != MatchLabel::Ignored)
        .collect();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = Vec::new();
    let mut tp = 0.0;
    for (i, (_, l)) in s.iter().enumerate() {
        if *l == MatchLabel::Tp {
            tp += 1.0;
        }
        pts.push((tp / num_gt as f64, tp / (i + 1) as f64));
    }
    let mut ap = 0.0;
    for t in 0..=10 {
        let r = t as f64 / 10.0;
        ap += pts
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max)
            / 11.0;
    }
    ap
}

fn random_scene(rng: &mut SplitMix64) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut gts = Vec::new();
    for _ in 0..rng.below(9) {
        let c = Point2::new(rng.uniform(0.0, 60.0), rng.uniform(0.0, 60.0));
        let scale = rng.uniform(5.0, 20.0);
        gts.push(GroundTruth {
            image_id: format!("i{}", rng.below(2)),
            quad: random_convex_quad(rng, c, scale),
            class_id: rng.below(2) as u32,
            difficult: rng.below(5) == 0,
        });
    }
    let mut dets = Vec::new();
    for _ in 0..rng.below(21) {
        let (image_id, class_id, quad) = if !gts.is_empty() && rng.below(3) > 0 {
            let g = &gts[rng.below(gts.len() as u64) as usize];
            let s = rng.uniform(0.0, 4.0);
            let t = Point2::new(rng.uniform(-s, s), rng.uniform(-s, s));
            (
                g.image_id.clone(),
                g.class_id,
                g.quad.map(|p| p + t).unwrap(),
            )
        } else {
            let c = Point2::new(rng.uniform(0.0, 60.0), rng.uniform(0.0, 60.0));
            let scale = rng.uniform(5.0, 20.0);
            (
                format!("i{}", rng.below(2)),
                rng.below(2) as u32,
                random_convex_quad(rng, c, scale),
            )
        };
        // coarse scores so ties occur
        let score = (rng.below(10) as f64) / 10.0;
        dets.push(Detection {
            image_id,
            quad,
            score,
            class_id,
        });
    }
    (dets, gts)
}

#[test]
fn matching_equals_brute_force() {
    let mut rng = SplitMix64::new(51);
    for _ in 0..200 {
        let (dets, gts) = random_scene(&mut rng);
        for thr in [0.3, 0.5, 0.75] {
            assert_eq!(
                match_detections(&dets, &gts, thr),
                brute_force_labels(&dets, &gts, thr)
            );
        }
    }
}

#[test]
fn ap_matches_brute_force() {
    let mut rng = SplitMix64::new(52);
    for _ in 0..300 {
        let n = 1 + rng.below(15) as usize;
        let num_gt = 1 + rng.below(10) as usize;
        let mut tp_left = num_gt;
        let scored: Vec<(f64, MatchLabel)> = (0..n)
            .map(|_| {
                let l = match rng.below(4) {
                    0 | 1 if tp_left > 0 => {
                        tp_left -= 1;
                        MatchLabel::Tp
                    }
                    3 => MatchLabel::Ignored,
                    _ => MatchLabel::Fp,
                };
                (rng.next_f64(), l)
            })
            .collect();
        let got = average_precision(&scored, num_gt, ApMethod::Voc07);
        assert!((got - brute_force_voc07(&scored, num_gt)).abs() < 1e-12);
    }
}

#[test]
fn ap_invariant_under_monotone_rescoring() {
    let mut rng = SplitMix64::new(53);
    for _ in 0..100 {
        let num_gt = 1 + rng.below(10) as usize;
        let scored: Vec<(f64, MatchLabel)> = (0..12)
            .map(|i| {
                (
                    rng.next_f64(),
                    if i < num_gt && rng.below(2) == 0 {
                        MatchLabel::Tp
                    } else {
                        MatchLabel::Fp
                    },
                )
            })
            .collect();
        let warped: Vec<(f64, MatchLabel)> = scored
            .iter()
            .map(|&(s, l)| ((3.0 * s).exp() - 7.0, l))
            .collect();
        for m in [ApMethod::Voc07, ApMethod::AllPoints] {
            assert_eq!(
                average_precision(&scored, num_gt, m),
                average_precision(&warped, num_gt, m)
            );
        }
    }
}

#[test]
fn trailing_false_positive_never_helps() {
    let mut rng = SplitMix64::new(54);
    for _ in 0..200 {
        let num_gt = 1 + rng.below(8) as usize;
        let mut scored: Vec<(f64, MatchLabel)> = (0..10)
            .map(|_| {
                (
                    rng.uniform(0.1, 1.0),
                    if rng.below(2) == 0 {
                        MatchLabel::Tp
                    } else {
                        MatchLabel::Fp
                    },
                )
            })
            .collect();
        let tps = scored.iter().filter(|s| s.1 == MatchLabel::Tp).count();
        if tps > num_gt {
            continue;
        }
        for m in [ApMethod::Voc07, ApMethod::AllPoints] {
            let before = average_precision(&scored, num_gt, m);
            scored.push((0.05, MatchLabel::Fp));
            assert!(average_precision(&scored, num_gt, m) <= before);
            scored.pop();
        }
    }
}

#[test]
fn perfect_detections_score_one() {
    let scene = synth_dataset(&SynthConfig {
        count: 200,
        ..SynthConfig::default()
    });
    let gts = to_ground_truths(&scene.ground_truths);
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            image_id: g.image_id.clone(),
            quad: g.quad,
            score: 1.0,
            class_id: g.class_id,
        })
        .collect();
    let r = map_over_thresholds(&dets, &gts, &coco_thresholds(), ApMethod::Voc07);
    assert!(r.map_per_threshold.iter().all(|&m| m == 1.0));
    let none = map_over_thresholds(&[], &gts, &[0.5], ApMethod::Voc07);
    assert_eq!(none.map, 0.0);
}

#[test]
fn ap_non_increasing_in_threshold_on_jittered_scene() {
    let scene = synth_dataset(&SynthConfig::default());
    let gts = to_ground_truths(&scene.ground_truths);
    let r = map_over_thresholds(&scene.detections, &gts, &coco_thresholds(), ApMethod::Voc07);
    for w in r.map_per_threshold.windows(2) {
        assert!(w[1] <= w[0], "{:?}", r.map_per_threshold);
    }
}

/// Per-class VOC07 mAP of a scene from the brute-force oracles.
fn oracle_map(dets: &[Detection], gts: &[GroundTruth], thr: f64, classes: u32) -> f64 {
    let labels = brute_force_labels(dets, gts, thr);
    let mut sum = 0.0;
    for c in 0..classes {
        let num_gt = gts
            .iter()
            .filter(|g| g.class_id == c && !g.difficult)
            .count();
        let scored: Vec<(f64, MatchLabel)> = dets
            .iter()
            .zip(&labels)
            .filter(|(d, _)| d.class_id == c)
            .map(|(d, &l)| (d.score, l))
            .collect();
        sum += brute_force_voc07(&scored, num_gt);
    }
    sum / classes as f64
}

#[test]
fn default_scene_map_frozen() {
    let scene = synth_dataset(&SynthConfig::default());
    let gts = to_ground_truths(&scene.ground_truths);
    for (thr, frozen) in [(0.5, 1.0), (0.75, FROZEN_AP75)] {
        let oracle = oracle_map(&scene.detections, &gts, thr, 3);
        println!("oracle AP@{thr} {oracle:.12}");
        let got = map_over_thresholds(&scene.detections, &gts, &[thr], ApMethod::Voc07).map;
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - frozen).abs() < 1e-9, "{got} vs frozen {frozen}");
    }
}

/// VOC07 mAP at IoU 0.75 of `SynthConfig::default()`, from `oracle_map`.
const FROZEN_AP75: f64 = 0.882_691_995_697;

#[test]
fn nms_keeps_non_overlapping_subset() {
    let mut rng = SplitMix64::new(55);
    for _ in 0..100 {
        let (dets, _) = random_scene(&mut rng);
        let kept = rotated_nms(&dets, 0.4);
        for (i, a) in kept.iter().enumerate() {
            assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                assert!(a.score >= b.score);
                if a.image_id == b.image_id && a.class_id == b.class_id {
                    assert!(iou(&a.quad, &b.quad) < 0.4);
                }
            }
        }
        // every dropped detection overlaps a kept one of higher or equal score
        for d in &dets {
            if !kept.contains(d) {
                assert!(kept.iter().any(|k| k.image_id == d.image_id
                    && k.class_id == d.class_id
                    && k.score >= d.score
                    && iou(&k.quad, &d.quad) >= 0.4));
            }
        }
    }
}

#[test]
fn nms_chain_of_offset_boxes() {
    let unit = |x: f64| Quad::from_flat([x, 0., x + 1., 0., x + 1., 1., x, 1.]).unwrap();
    let d = |x: f64, s: f64| Detection {
        image_id: "a".into(),
        quad: unit(x),
        score: s,
        class_id: 0,
    };
    // A-B and B-C overlap at IoU 0.6, A-C at 1/3
    let kept = rotated_nms(&[d(0.0, 0.9), d(0.25, 0.8), d(0.5, 0.7)], 0.5);
    assert_eq!(
        kept.iter().map(|k| k.score).collect::<Vec<_>>(),
        vec![0.9, 0.7]
    );
}
