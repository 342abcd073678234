//! Command-line surface. Every tunable is optional here so that a config file
//! can fill the gaps before built-in defaults apply.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "drivable",
    version,
    about = "Drivable-area annotation, proposal geometry and mAP tooling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML file with per-subcommand defaults (flags still win)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug, -vvv trace)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse BDD-style labels, drop frames without drivable area, write a normalized file
    Preprocess(PreprocessArgs),
    /// Write one mask per (image, class) pair
    Rasterize(RasterizeArgs),
    /// Score predictions against ground truth, overall and per condition
    Eval(EvalArgs),
    /// Generate a synthetic annotation file and matching predictions
    Synth(SynthArgs),
    /// Print the anchor boxes tiled over a feature grid
    Anchors(AnchorArgs),
    /// Compare RoIPool and RoIAlign on a toy feature grid
    RoiDemo(RoiDemoArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Label file(s), BDD array or normalized form; several files are merged
    #[arg(long, required = true, num_args = 1..)]
    pub labels: Vec<PathBuf>,
    /// Normalized annotation file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Frame size assumed when a record has none [default: 1280x720]
    #[arg(long, value_name = "WxH")]
    pub default_dims: Option<String>,
    /// Keep frames that have no drivable polygon
    #[arg(long)]
    pub keep_empty: bool,
}

#[derive(Args, Debug)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Mask file format [default: rle]
    #[arg(long, value_enum)]
    pub format: Option<MaskFormat>,
    /// Frame size assumed when a record has none [default: 1280x720]
    #[arg(long, value_name = "WxH")]
    pub default_dims: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth labels, BDD array or normalized form
    #[arg(long)]
    pub labels: PathBuf,
    /// Predictions as JSON Lines
    #[arg(long)]
    pub predictions: PathBuf,
    /// Minimum IoU for a match [default: 0.5]
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Geometry compared during matching [default: box]
    #[arg(long, value_enum)]
    pub iou_kind: Option<IouKindArg>,
    /// JSON report path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the stratified table as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Cap on worker threads [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Count predictions for unknown images as false positives
    #[arg(long)]
    pub strict_orphans: bool,
    /// Embed the generation time in the report
    #[arg(long)]
    pub stamp: bool,
    /// Frame size assumed when a record has none [default: 1280x720]
    #[arg(long, value_name = "WxH")]
    pub default_dims: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Normalized annotation file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Prediction JSON Lines file to write
    #[arg(long)]
    pub predictions: PathBuf,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 200]
    #[arg(long)]
    pub n_images: Option<usize>,
    /// [default: 320x180]
    #[arg(long, value_name = "WxH")]
    pub image_size: Option<String>,
    /// Lanes per image, `N` or `MIN-MAX` [default: 1-3]
    #[arg(long)]
    pub lanes: Option<String>,
    /// Vertex noise std in pixels [default: 3]
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Probability a lane gets no prediction [default: 0.2]
    #[arg(long)]
    pub drop_rate: Option<f64>,
    /// Expected spurious predictions per image [default: 0.5]
    #[arg(long)]
    pub fp_rate: Option<f64>,
    /// Score perturbation std [default: 0.2]
    #[arg(long)]
    pub score_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AnchorArgs {
    /// Feature grid as ROWSxCOLS [default: 3x4]
    #[arg(long, value_name = "ROWSxCOLS")]
    pub grid: Option<String>,
    /// [default: 16]
    #[arg(long)]
    pub base_size: Option<f64>,
    /// [default: 8]
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Height/width ratios [default: 0.5,1,2]
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Feature stride in pixels [default: 16]
    #[arg(long)]
    pub stride: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RoiDemoArgs {
    /// Feature grid as ROWSxCOLS [default: 8x8]
    #[arg(long, value_name = "ROWSxCOLS")]
    pub grid: Option<String>,
    /// Feature values [default: ramp]
    #[arg(long, value_enum)]
    pub field: Option<FieldKind>,
    /// Value of the constant field [default: 1]
    #[arg(long)]
    pub value: Option<f64>,
    /// Region in image pixels as x,y,w,h [default: 7,7,64,64]
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub roi: Option<Vec<f64>>,
    /// Image-to-feature scale [default: 0.0625]
    #[arg(long)]
    pub scale: Option<f64>,
    /// Output bins as ROWSxCOLS [default: 2x2]
    #[arg(long, value_name = "ROWSxCOLS")]
    pub bins: Option<String>,
    /// RoIAlign samples per bin along each axis [default: 2]
    #[arg(long)]
    pub sampling_points: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFormat {
    Rle,
    Pgm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKindArg {
    Box,
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// Every cell holds the same value
    Constant,
    /// Value equals the column index
    Ramp,
}
