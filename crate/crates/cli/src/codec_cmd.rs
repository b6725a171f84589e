//! `encode`, `decode` and `roundtrip`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use oskgeom::codec::{
    self, channel_to_pgm, expand_roi, from_oskh_bytes, to_oskh_bytes, DecodeConfig, Roi,
    NUM_KEYPOINTS,
};
use oskgeom::dataio::{self, class_ids, fmt_sig9, random_convex_quad};
use oskgeom::evalkit::Detection;
use oskgeom::geom::{Point2, Quad};
use oskgeom::rng::SplitMix64;
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::{parse, DecodeArgs, EncodeArgs, RoundtripArgs};

const INSTANCES_FILE: &str = "instances.csv";
const INSTANCES_HEADER: &str = "index,image_id,class_id,roi_x,roi_y,roi_w,roi_h,file";

/// p99 vertex error limit, in heatmap cells.
pub const ROUNDTRIP_LIMIT_CELLS: f64 = 0.75;

struct Instance {
    image_id: String,
    class_id: u32,
    quad: Quad,
}

fn load_instances(args: &EncodeArgs) -> Result<Vec<Instance>> {
    if let Some(q) = &args.quad {
        return Ok(vec![Instance {
            image_id: "0".into(),
            class_id: 0,
            quad: parse::quad(q)?,
        }]);
    }
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("--input or --quad required".into()))?;
    let records = dataio::read_annotations(path)?;
    let ids = class_ids(&records);
    Ok(records
        .into_iter()
        .map(|r| Instance {
            class_id: ids[&r.record.category],
            image_id: r.image_id,
            quad: r.record.quad,
        })
        .collect())
}

pub fn encode(args: EncodeArgs) -> Result<()> {
    let cfg = args.codec.config()?;
    let fixed_roi = args.roi.as_deref().map(parse::roi).transpose()?;
    let instances = load_instances(&args)?;
    fs::create_dir_all(&args.out)?;

    let encoded: Vec<(Roi, codec::Heatmap)> = instances
        .par_iter()
        .map(|inst| {
            let roi = match fixed_roi {
                Some(r) => r,
                None => Roi::bounding(&inst.quad)?,
            };
            Ok((roi, codec::encode(&inst.quad, &roi, &cfg)?))
        })
        .collect::<Result<_>>()?;

    let mut index = format!("{INSTANCES_HEADER}\n");
    let mut zero_channels = 0;
    for (i, (inst, (roi, hm))) in instances.iter().zip(&encoded).enumerate() {
        let name = format!("inst_{i:05}.oskh");
        fs::write(args.out.join(&name), to_oskh_bytes(hm))?;
        if args.pgm {
            for k in 0..NUM_KEYPOINTS {
                fs::write(
                    args.out.join(format!("inst_{i:05}_k{k}.pgm")),
                    channel_to_pgm(hm, k),
                )?;
            }
        }
        zero_channels += (0..NUM_KEYPOINTS)
            .filter(|&k| hm.channel(k).iter().all(|&v| v == 0.0))
            .count();
        let _ = writeln!(
            index,
            "{i},{},{},{},{},{},{},{name}",
            inst.image_id,
            inst.class_id,
            fmt_sig9(roi.x),
            fmt_sig9(roi.y),
            fmt_sig9(roi.w),
            fmt_sig9(roi.h)
        );
    }
    fs::write(args.out.join(INSTANCES_FILE), index)?;
    println!(
        "encoded {} instances into {} ({} all-zero channels)",
        instances.len(),
        args.out.display(),
        zero_channels
    );
    Ok(())
}

struct IndexRow {
    image_id: String,
    class_id: u32,
    roi: Roi,
    file: String,
}

fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let text = fs::read_to_string(dir.join(INSTANCES_FILE))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(INSTANCES_HEADER) {
        return Err(CliError::Input(format!("{INSTANCES_FILE}: missing header")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| CliError::Input(format!("{INSTANCES_FILE} line {}: {what}", n + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let roi = Roi::new(num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?)
            .map_err(|e| bad(&e.to_string()))?;
        rows.push(IndexRow {
            image_id: f[1].to_string(),
            class_id: f[2].parse().map_err(|_| bad("bad class id"))?,
            roi,
            file: f[7].to_string(),
        });
    }
    Ok(rows)
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let cfg = args.codec.config()?;
    let dcfg = DecodeConfig {
        fuse_midpoints: !args.no_fuse,
        lambda: args.lambda,
        score_floor: args.score_floor,
    };
    if dcfg.lambda.is_nan() || dcfg.lambda < 0.0 {
        return Err(CliError::Usage("--lambda must be >= 0".into()));
    }
    let rows = read_index(&args.input)?;
    let decoded: Vec<Option<Detection>> = rows
        .par_iter()
        .map(|row| {
            let hm = from_oskh_bytes(&fs::read(args.input.join(&row.file))?)?;
            Ok(
                codec::decode(&hm, &row.roi, &cfg, &dcfg)?.map(|d| Detection {
                    image_id: row.image_id.clone(),
                    quad: d.quad,
                    score: d.score,
                    class_id: row.class_id,
                }),
            )
        })
        .collect::<Result<_>>()?;
    let dets: Vec<Detection> = decoded.into_iter().flatten().collect();
    dataio::write_detections(&args.out, &dets)?;
    println!("decoded {} of {} heatmaps", dets.len(), rows.len());
    Ok(())
}

#[derive(Default, Clone, Copy)]
struct VertexError {
    x_px: f64,
    y_px: f64,
    x_cells: f64,
    y_cells: f64,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).ceil() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn stats_rows(label: &str, errs: &[VertexError], out: &mut String) -> (f64, f64) {
    let columns: [Vec<f64>; 4] = [
        errs.iter().map(|e| e.x_px).collect(),
        errs.iter().map(|e| e.y_px).collect(),
        errs.iter().map(|e| e.x_cells).collect(),
        errs.iter().map(|e| e.y_cells).collect(),
    ];
    let mut sorted = columns.clone();
    for c in sorted.iter_mut() {
        c.sort_by(f64::total_cmp);
    }
    let n = errs.len().max(1) as f64;
    let mean: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let p99: Vec<f64> = sorted.iter().map(|c| nearest_rank(c, 0.99)).collect();
    let max: Vec<f64> = sorted.iter().map(|c| *c.last().unwrap_or(&0.0)).collect();
    for (stat, v) in [("mean", &mean), ("p99", &p99), ("max", &max)] {
        let _ = writeln!(
            out,
            "{label},{stat},{:.9},{:.9},{:.9},{:.9}",
            v[0], v[1], v[2], v[3]
        );
    }
    (p99[2], p99[3])
}

pub fn roundtrip(args: RoundtripArgs) -> Result<()> {
    let cfg = args.codec.config()?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let mut rng = SplitMix64::new(args.seed);
    let quads: Vec<Quad> = (0..args.count)
        .map(|_| {
            let scale = rng.uniform(10.0, 200.0);
            let center = Point2::new(rng.uniform(200.0, 800.0), rng.uniform(200.0, 800.0));
            random_convex_quad(&mut rng, center, scale)
        })
        .collect();
    let dcfg = DecodeConfig::default();
    let m = cfg.heatmap_size as f64;
    let results: Vec<Option<[VertexError; 4]>> = quads
        .par_iter()
        .map(|q| {
            let roi = Roi::bounding(q)?;
            let hm = codec::encode(q, &roi, &cfg)?;
            let Some(d) = codec::decode(&hm, &roi, &cfg, &dcfg)? else {
                return Ok(None);
            };
            let e = expand_roi(&roi, cfg.expansion_ratio);
            Ok(Some(std::array::from_fn(|k| {
                let diff = d.quad.vertex(k) - q.vertex(k);
                VertexError {
                    x_px: diff.x.abs(),
                    y_px: diff.y.abs(),
                    x_cells: diff.x.abs() * m / e.w,
                    y_cells: diff.y.abs() * m / e.h,
                }
            })))
        })
        .collect::<Result<_>>()?;

    let missing = results.iter().filter(|r| r.is_none()).count();
    let per_vertex: Vec<[VertexError; 4]> = results.into_iter().flatten().collect();
    let mut csv = String::from("vertex,stat,x_px,y_px,x_cells,y_cells\n");
    for k in 0..4 {
        let errs: Vec<VertexError> = per_vertex.iter().map(|e| e[k]).collect();
        stats_rows(&k.to_string(), &errs, &mut csv);
    }
    let all: Vec<VertexError> = per_vertex.iter().flatten().copied().collect();
    let (p99x, p99y) = stats_rows("all", &all, &mut csv);
    let pass = missing == 0 && p99x <= ROUNDTRIP_LIMIT_CELLS && p99y <= ROUNDTRIP_LIMIT_CELLS;

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("roundtrip.csv"), &csv)?;
    }
    print!("{csv}");
    println!(
        "roundtrip: {} quads, {} undecoded, p99 vertex error x {:.4} y {:.4} cells (limit {}) {}",
        args.count,
        missing,
        p99x,
        p99y,
        ROUNDTRIP_LIMIT_CELLS,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(())
}
