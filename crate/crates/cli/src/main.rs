//! `oskgeom` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 input parse error, 4 numeric or
//! geometry error.

mod analysis;
mod codec_cmd;
mod error;
mod eval_cmd;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oskgeom::codec::{HeatmapMode, OshConfig};
use oskgeom::dataio::AngleLaw;
use oskgeom::evalkit::ApMethod;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "oskgeom",
    version,
    about = "Orientation-sensitive keypoint geometry toolkit"
)]
struct Cli {
    /// Worker threads for batch work (0 = all cores). Output bytes do not
    /// depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode quads into OSKH keypoint heatmaps.
    Encode(EncodeArgs),
    /// Decode a directory of OSKH heatmaps into detections.
    Decode(DecodeArgs),
    /// Encode and decode random quads and report vertex errors.
    Roundtrip(RoundtripArgs),
    /// First-edge angle histogram and minimum-confusion threshold.
    ReorderStats(ReorderStatsArgs),
    /// Sampling patterns for the eight keypoints of a quad.
    RcnOffsets(RcnArgs),
    /// Feature fusion masks for the eight keypoints.
    MffMasks(MffArgs),
    /// Exact and pixel-counting IoU of two quads.
    Iou(IouArgs),
    /// Average precision of detections against ground truth.
    Eval(EvalArgs),
    /// Rotated non-maximum suppression over a detections file.
    Nms(NmsArgs),
    /// Generate a synthetic ground-truth and detection set.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Osh,
    Sgh,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApMethodArg {
    Voc07,
    Allpoints,
}

impl From<ApMethodArg> for ApMethod {
    fn from(m: ApMethodArg) -> Self {
        match m {
            ApMethodArg::Voc07 => ApMethod::Voc07,
            ApMethodArg::Allpoints => ApMethod::AllPoints,
        }
    }
}

#[derive(Debug, Args)]
struct CodecArgs {
    /// Across-edge Gaussian standard deviation, in heatmap cells.
    #[arg(long, default_value_t = 0.8)]
    sigma: f64,
    /// Along-edge to across-edge standard deviation ratio.
    #[arg(long, default_value_t = 3.0)]
    aspect_scale: f64,
    /// Heatmap side length M.
    #[arg(long, default_value_t = 56)]
    heatmap_size: usize,
    /// ROI expansion ratio.
    #[arg(long, default_value_t = 0.25)]
    expansion_ratio: f64,
    /// Heatmap flavor.
    #[arg(long, value_enum, default_value_t = ModeArg::Osh)]
    mode: ModeArg,
}

impl CodecArgs {
    fn config(&self) -> Result<OshConfig> {
        let cfg = OshConfig {
            expansion_ratio: self.expansion_ratio,
            heatmap_size: self.heatmap_size,
            sigma: self.sigma,
            aspect_scale: self.aspect_scale,
            mode: match self.mode {
                ModeArg::Osh => HeatmapMode::Osh,
                ModeArg::Sgh => HeatmapMode::Sgh,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[command(flatten)]
    codec: CodecArgs,
    /// Dataset or DOTA annotation file.
    #[arg(long, conflicts_with = "quad", required_unless_present = "quad")]
    input: Option<PathBuf>,
    /// A single quad as `x1,y1,x2,y2,x3,y3,x4,y4`.
    #[arg(long, allow_hyphen_values = true)]
    quad: Option<String>,
    /// ROI `x,y,w,h` used for every instance (default: each quad's bounding box).
    #[arg(long, allow_hyphen_values = true)]
    roi: Option<String>,
    /// Also write one PGM render per channel.
    #[arg(long)]
    pgm: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    codec: CodecArgs,
    /// Directory written by `encode` (holds instances.csv).
    #[arg(long)]
    input: PathBuf,
    /// Output detections file.
    #[arg(long)]
    out: PathBuf,
    /// Weight of the midpoint consistency term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Skip midpoint fusion.
    #[arg(long)]
    no_fuse: bool,
    /// Peaks below this value count as absent.
    #[arg(long, default_value_t = 0.05)]
    score_floor: f64,
}

#[derive(Debug, Args)]
struct RoundtripArgs {
    #[command(flatten)]
    codec: CodecArgs,
    /// Number of random quads.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for roundtrip.csv and per-instance errors.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReorderStatsArgs {
    /// Dataset or DOTA annotation file; otherwise a synthetic set is drawn.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed for the synthetic set.
    #[arg(long, required_unless_present = "input")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// `uniform:lo,hi`, `gapped:lo,hi,gap_lo,gap_hi` or `peaked:center,width`.
    #[arg(long, default_value = "uniform:0,90", value_parser = parse::angle_law)]
    angle_law: AngleLaw,
    /// Threshold used to report how many instances switch order.
    #[arg(long, default_value_t = 44.0)]
    threshold_deg: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RcnArgs {
    #[command(flatten)]
    codec: CodecArgs,
    /// Quad as `x1,y1,x2,y2,x3,y3,x4,y4`.
    #[arg(long, allow_hyphen_values = true)]
    quad: String,
    #[arg(long, default_value_t = 4)]
    arm_len: u32,
    #[arg(long, default_value_t = 2)]
    pts_per_arm: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MffArgs {
    #[arg(long, default_value_t = 44.0)]
    threshold_deg: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IouArgs {
    /// First quad as `x1,y1,...,x4,y4`.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    /// Second quad.
    #[arg(long, allow_hyphen_values = true)]
    b: String,
    /// Raster resolution of the pixel-counting oracle.
    #[arg(long, default_value_t = 2000)]
    resolution: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground truth (dataset or DOTA file).
    #[arg(long)]
    gt: PathBuf,
    /// Detections file.
    #[arg(long)]
    dets: PathBuf,
    /// Comma-separated IoU thresholds, or `coco` for 0.50:0.95.
    #[arg(long, default_value = "0.5", value_parser = parse::thresholds)]
    iou_thr: parse::Thresholds,
    #[arg(long, value_enum, default_value_t = ApMethodArg::Voc07)]
    ap_method: ApMethodArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NmsArgs {
    /// Detections file.
    #[arg(long)]
    input: PathBuf,
    /// Suppression IoU threshold.
    #[arg(long, default_value_t = 0.5)]
    iou_thr: f64,
    /// Output detections file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value = "uniform:0,90", value_parser = parse::angle_law)]
    angle_law: AngleLaw,
    /// Detection vertex noise std in pixels.
    #[arg(long, default_value_t = 1.5)]
    jitter: f64,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 3)]
    classes: u32,
    /// Output directory (gt.txt, dets.txt).
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Encode(a) => codec_cmd::encode(a),
        Command::Decode(a) => codec_cmd::decode(a),
        Command::Roundtrip(a) => codec_cmd::roundtrip(a),
        Command::ReorderStats(a) => analysis::reorder_stats(a),
        Command::RcnOffsets(a) => analysis::rcn_offsets(a),
        Command::MffMasks(a) => analysis::mff_masks(a),
        Command::Iou(a) => analysis::iou(a),
        Command::Eval(a) => eval_cmd::eval(a),
        Command::Nms(a) => eval_cmd::nms(a),
        Command::Synth(a) => eval_cmd::synth(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
