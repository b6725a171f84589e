//! `eval`, `nms` and `synth`.

use std::collections::BTreeSet;
use std::fs;

use oskgeom::dataio::{self, synth_dataset, ScoreLaw, SynthConfig};
use oskgeom::evalkit::{map_over_thresholds, rotated_nms};

use crate::error::{CliError, Result};
use crate::{EvalArgs, NmsArgs, SynthArgs};

pub fn eval(args: EvalArgs) -> Result<()> {
    let records = dataio::read_annotations(&args.gt)?;
    let gts = dataio::to_ground_truths(&records);
    let dets = dataio::read_detections(&args.dets)?;

    let gt_images: BTreeSet<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
    let unknown: BTreeSet<&str> = dets
        .iter()
        .map(|d| d.image_id.as_str())
        .filter(|id| !gt_images.contains(id))
        .collect();
    if !unknown.is_empty() {
        let list: Vec<&str> = unknown.into_iter().collect();
        eprintln!(
            "warning: detections reference image ids absent from ground truth: {}",
            list.join(", ")
        );
    }

    let result = map_over_thresholds(&dets, &gts, &args.iou_thr.0, args.ap_method.into());
    let csv = result.to_csv();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ap.csv"), &csv)?;
    }
    print!("{csv}");
    for (t, m) in result.thresholds.iter().zip(&result.map_per_threshold) {
        println!("mAP@{t:.2} = {m:.6}");
    }
    println!("mAP = {:.6}", result.map);
    Ok(())
}

pub fn nms(args: NmsArgs) -> Result<()> {
    if !(args.iou_thr > 0.0 && args.iou_thr < 1.0) {
        return Err(CliError::Usage("--iou-thr must lie in (0, 1)".into()));
    }
    let dets = dataio::read_detections(&args.input)?;
    let kept = rotated_nms(&dets, args.iou_thr);
    dataio::write_detections(&args.out, &kept)?;
    println!("kept {} of {} detections", kept.len(), dets.len());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        count: args.count,
        angle_law: args.angle_law,
        jitter: args.jitter,
        num_images: args.images,
        num_classes: args.classes,
        score_law: ScoreLaw::default(),
        ..SynthConfig::default()
    };
    cfg.validate().map_err(CliError::Usage)?;
    let scene = synth_dataset(&cfg);
    fs::create_dir_all(&args.out)?;
    dataio::write_dataset(args.out.join("gt.txt"), &scene.ground_truths)?;
    dataio::write_detections(args.out.join("dets.txt"), &scene.detections)?;
    println!(
        "wrote {} ground truths and {} detections to {}",
        scene.ground_truths.len(),
        scene.detections.len(),
        args.out.display()
    );
    Ok(())
}
