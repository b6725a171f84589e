//! `reorder-stats`, `rcn-offsets`, `mff-masks` and `iou`.

use std::fs;

use oskgeom::attn::{self, rcn_patterns};
use oskgeom::codec::{heatmap_keypoints, Roi};
use oskgeom::dataio::{self, synth_dataset, SynthConfig};
use oskgeom::geom::{iou_exact, iou_pixel, GeomError, Quad};
use oskgeom::reorder::{
    angle_histogram, first_edge_angle, select_min_confusion_threshold, ReorderConfig,
};

use crate::error::{CliError, Result};
use crate::{parse, IouArgs, MffArgs, RcnArgs, ReorderStatsArgs};

pub fn reorder_stats(args: ReorderStatsArgs) -> Result<()> {
    let cfg = ReorderConfig::new(args.threshold_deg).map_err(|e| CliError::Usage(e.to_string()))?;
    let quads: Vec<Quad> = match (&args.input, args.seed) {
        (Some(path), _) => dataio::read_annotations(path)?
            .into_iter()
            .map(|r| r.record.quad)
            .collect(),
        (None, Some(seed)) => {
            let synth = SynthConfig {
                seed,
                count: args.count,
                angle_law: args.angle_law,
                ..SynthConfig::default()
            };
            synth.validate().map_err(CliError::Usage)?;
            synth_dataset(&synth)
                .ground_truths
                .into_iter()
                .map(|r| r.record.quad)
                .collect()
        }
        (None, None) => return Err(CliError::Usage("--input or --seed required".into())),
    };
    let hist = angle_histogram(&quads);
    let threshold =
        select_min_confusion_threshold(&hist).map_err(|e| CliError::Numeric(e.to_string()))?;
    let above = quads
        .iter()
        .filter(|q| first_edge_angle(q).1 > cfg.threshold_deg())
        .count();

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("histogram.csv"), hist.to_csv())?;
    }
    println!("instances: {}", hist.total);
    println!("min-confusion bin count: {}", hist.bins[threshold as usize]);
    println!(
        "instances above {} deg (start at top vertex): {above}",
        cfg.threshold_deg()
    );
    println!("threshold: {threshold}");
    Ok(())
}

pub fn rcn_offsets(args: RcnArgs) -> Result<()> {
    let cfg = args.codec.config()?;
    if args.arm_len == 0 || args.pts_per_arm == 0 {
        return Err(CliError::Usage(
            "--arm-len and --pts-per-arm must be positive".into(),
        ));
    }
    let quad = parse::quad(&args.quad)?;
    let kp = heatmap_keypoints(&quad, &Roi::bounding(&quad)?, &cfg)?;
    let patterns = rcn_patterns(&kp, args.arm_len, args.pts_per_arm);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        for (k, p) in patterns.iter().enumerate() {
            fs::write(dir.join(format!("pattern_p{k}.csv")), p.to_csv())?;
        }
    }
    for (k, p) in patterns.iter().enumerate() {
        println!("p{k}: {} points", p.len());
        print!("{}", p.to_csv());
    }
    Ok(())
}

pub fn mff_masks(args: MffArgs) -> Result<()> {
    let masks = attn::mff_masks(args.threshold_deg).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = masks.to_text();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("masks.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn iou(args: IouArgs) -> Result<()> {
    let a = parse::quad(&args.a)?;
    let b = parse::quad(&args.b)?;
    let pixel = iou_pixel(&a, &b, args.resolution).map_err(|e| match e {
        GeomError::ResolutionTooSmall(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    match iou_exact(&a, &b) {
        Ok(v) => println!("exact {v:.6}"),
        Err(GeomError::NonConvexInput) => println!("exact n/a (non-convex input)"),
        Err(e) => return Err(e.into()),
    }
    println!("pixel {pixel:.6}");
    Ok(())
}
