//! Batch front end for `drivable-core`: preprocessing, mask export,
//! evaluation, synthetic suites and proposal-geometry demos.
//!
//! Option values are resolved as command-line flag, then `--config` file
//! entry, then built-in default.

pub mod args;
pub mod commands;
pub mod config;

use std::io::Write;
use std::path::Path;

use drivable_core::geometry::BBox;
use drivable_core::metrics::{IouKind, MatchConfig};
use drivable_core::proposals::AnchorConfig;
use drivable_core::synth::SynthParams;
use serde::Serialize;

use args::{Cli, Command, FieldKind, IouKindArg, MaskFormat};
use commands::{AnchorOptions, EvalCommandOptions, PreprocessOptions, RasterizeOptions, RoiDemoOptions, SynthOptions};
use config::FileConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed or out-of-contract input.
    #[error("{0}")]
    BadInput(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] drivable_core::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// `2` for bad input or flags, `1` for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Core(drivable_core::Error::Io(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Internal(_) => 1,
        }
    }

    fn in_file(path: &Path, err: drivable_core::Error) -> Self {
        match err {
            drivable_core::Error::Io(e) => CliError::Io {
                context: format!("reading {}", path.display()),
                source: e,
            },
            other => CliError::BadInput(format!("{}: {other}", path.display())),
        }
    }
}

/// Parses `AxB` (also accepting `×`) into two positive integers.
pub fn parse_pair<T>(text: &str, what: &str) -> Result<(T, T), CliError>
where
    T: std::str::FromStr + PartialOrd + Default,
{
    let bad = || CliError::BadInput(format!("{what} `{text}` is not of the form AxB with positive A and B"));
    let (a, b) = text.split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let a: T = a.trim().parse().map_err(|_| bad())?;
    let b: T = b.trim().parse().map_err(|_| bad())?;
    if a <= T::default() || b <= T::default() {
        return Err(bad());
    }
    Ok((a, b))
}

/// Parses `N` or `MIN-MAX`.
pub fn parse_range(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::BadInput(format!("lane range `{text}` is not N or MIN-MAX"));
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    match text.split_once('-') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let n = parse(text)?;
            Ok((n, n))
        }
    }
}

fn emit_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: std::io::Error| CliError::Io {
        context: "writing stdout".to_string(),
        source: e,
    };
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(e.into()))?;
    writeln!(out).map_err(io_err)
}

/// Runs one parsed invocation, printing its JSON result on stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let dims = |flag: &Option<String>, cfg: &Option<String>| -> Result<(u32, u32), CliError> {
        match flag.as_ref().or(cfg.as_ref()) {
            Some(text) => parse_pair(text, "dimensions"),
            None => Ok(drivable_core::dataset::DEFAULT_DIMS),
        }
    };

    match cli.command {
        Command::Preprocess(a) => {
            let c = &file.preprocess;
            let opts = PreprocessOptions {
                default_dims: dims(&a.default_dims, &c.default_dims)?,
                keep_empty: a.keep_empty || c.keep_empty.unwrap_or(false),
                labels: a.labels,
                out: a.out,
            };
            let report = commands::cmd_preprocess(&opts)?;
            log::info!(
                "kept {} of {} frames ({:.2}% dropped)",
                report.kept,
                report.total_in,
                100.0 * report.drop_fraction
            );
            emit_json(&report)
        }
        Command::Rasterize(a) => {
            let c = &file.rasterize;
            let opts = RasterizeOptions {
                default_dims: dims(&a.default_dims, &c.default_dims)?,
                format: a.format.or(c.format).unwrap_or(MaskFormat::Rle),
                labels: a.labels,
                out: a.out,
            };
            let written = commands::cmd_rasterize(&opts)?;
            emit_json(&serde_json::json!({ "written": written }))
        }
        Command::Eval(a) => {
            let c = &file.eval;
            let kind = match a.iou_kind.or(c.iou_kind).unwrap_or(IouKindArg::Box) {
                IouKindArg::Box => IouKind::Box,
                IouKindArg::Mask => IouKind::Mask,
            };
            let threshold = a.iou_threshold.or(c.iou_threshold).unwrap_or(0.5);
            let opts = EvalCommandOptions {
                default_dims: dims(&a.default_dims, &c.default_dims)?,
                match_config: MatchConfig::new(threshold, kind),
                threads: a.threads.or(c.threads),
                strict_orphans: a.strict_orphans || c.strict_orphans.unwrap_or(false),
                stamp: a.stamp || c.stamp.unwrap_or(false),
                labels: a.labels,
                predictions: a.predictions,
                out: a.out,
                csv: a.csv,
            };
            let report = commands::cmd_eval(&opts)?;
            log::info!("mAP {:.4}", report.map);
            if opts.out.is_none() {
                let stdout = std::io::stdout();
                report.write_json(stdout.lock())?;
            }
            Ok(())
        }
        Command::Synth(a) => {
            let c = &file.synth;
            let d = SynthParams::default();
            let image_size = match a.image_size.as_ref().or(c.image_size.as_ref()) {
                Some(t) => parse_pair(t, "image size")?,
                None => d.image_size,
            };
            let lanes_per_image = match a.lanes.as_ref().or(c.lanes.as_ref()) {
                Some(t) => parse_range(t)?,
                None => d.lanes_per_image,
            };
            let params = SynthParams {
                seed: a.seed.or(c.seed).unwrap_or(d.seed),
                n_images: a.n_images.or(c.n_images).unwrap_or(d.n_images),
                image_size,
                lanes_per_image,
                jitter: a.jitter.or(c.jitter).unwrap_or(d.jitter),
                drop_rate: a.drop_rate.or(c.drop_rate).unwrap_or(d.drop_rate),
                fp_rate: a.fp_rate.or(c.fp_rate).unwrap_or(d.fp_rate),
                score_noise: a.score_noise.or(c.score_noise).unwrap_or(d.score_noise),
            };
            let opts = SynthOptions {
                params,
                out: a.out,
                predictions: a.predictions,
            };
            emit_json(&commands::cmd_synth(&opts)?)
        }
        Command::Anchors(a) => {
            let c = &file.anchors;
            let grid = match a.grid.as_ref().or(c.grid.as_ref()) {
                Some(t) => parse_pair(t, "grid")?,
                None => (3, 4),
            };
            let defaults = AnchorConfig::default();
            let config = AnchorConfig {
                base_size: a.base_size.or(c.base_size).unwrap_or(defaults.base_size),
                scales: a.scales.or_else(|| c.scales.clone()).unwrap_or_else(|| vec![8.0]),
                ratios: a.ratios.or_else(|| c.ratios.clone()).unwrap_or(defaults.ratios),
                feature_stride: a.stride.or(c.stride).unwrap_or(defaults.feature_stride),
            };
            emit_json(&commands::cmd_anchors(&AnchorOptions { config, grid })?)
        }
        Command::RoiDemo(a) => {
            let c = &file.roi_demo;
            let pair = |flag: &Option<String>, cfg: &Option<String>, what, default| match flag.as_ref().or(cfg.as_ref())
            {
                Some(t) => parse_pair(t, what),
                None => Ok(default),
            };
            let roi = match a.roi.or_else(|| c.roi.clone()) {
                Some(v) if v.len() == 4 => BBox::new(v[0], v[1], v[2], v[3]),
                Some(v) => return Err(CliError::BadInput(format!("roi needs 4 values, got {}", v.len()))),
                None => BBox::new(7.0, 7.0, 64.0, 64.0),
            };
            let opts = RoiDemoOptions {
                grid: pair(&a.grid, &c.grid, "grid", (8, 8))?,
                field: a.field.or(c.field).unwrap_or(FieldKind::Ramp),
                value: a.value.or(c.value).unwrap_or(1.0),
                roi,
                scale: a.scale.or(c.scale).unwrap_or(0.0625),
                bins: pair(&a.bins, &c.bins, "bins", (2, 2))?,
                sampling_points: a.sampling_points.or(c.sampling_points).unwrap_or(2),
            };
            emit_json(&commands::cmd_roi_demo(&opts)?)
        }
    }
}
