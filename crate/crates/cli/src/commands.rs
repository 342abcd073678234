//! The subcommands as plain functions over resolved options.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use drivable_core::dataset::{filter_drivable, parse_labels, write_normalized, DatasetIndex, DropReport, LaneClass};
use drivable_core::geometry::{rasterize_polygon, rle_encode, write_pgm, BBox, BitMask};
use drivable_core::metrics::{
    evaluate_with_options, read_predictions, write_predictions, EvalOptions, EvalReport, MatchConfig,
};
use drivable_core::proposals::{
    generate_anchors, misalignment_report, roi_align, roi_align_misalignment, roi_pool, AnchorConfig, FeatureGrid,
    Misalignment, RoiSpec,
};
use drivable_core::synth::{generate_suite, SynthParams};
use serde::Serialize;

use crate::args::{FieldKind, MaskFormat};
use crate::CliError;

/// Writes through a temporary file in the destination directory, so a failed
/// run never leaves a partial file behind.
fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::BadInput(format!("cannot read {}: {e}", path.display())))
}

fn load_index(path: &Path, default_dims: (u32, u32)) -> Result<DatasetIndex, CliError> {
    let raw = read_input(path)?;
    let (index, _) = parse_labels(&raw, default_dims).map_err(|e| CliError::in_file(path, e))?;
    Ok(index)
}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub labels: Vec<PathBuf>,
    pub out: PathBuf,
    pub default_dims: (u32, u32),
    pub keep_empty: bool,
}

/// Parses, filters and rewrites annotations; returns the drop statistics.
pub fn cmd_preprocess(opts: &PreprocessOptions) -> Result<DropReport, CliError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for path in &opts.labels {
        let raw = read_input(path)?;
        let (index, w) = parse_labels(&raw, opts.default_dims).map_err(|e| CliError::in_file(path, e))?;
        log::info!("{}: {} frames", path.display(), index.len());
        records.extend(index.into_records());
        warnings.push(w);
    }
    let index = DatasetIndex::new(records, drivable_core::dataset::Split::Other)?;
    let (index, report) = if opts.keep_empty {
        let n = index.len();
        (index, DropReport::new(n, Vec::new()))
    } else {
        let (kept, mut report) = filter_drivable(index);
        for w in &warnings {
            let before = report.dropped_after_rejection;
            report.attribute_rejections(w);
            report.dropped_after_rejection += before;
        }
        (kept, report)
    };
    write_atomically(&opts.out, |w| {
        write_normalized(&index, w)?;
        Ok(())
    })?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct RasterizeOptions {
    pub labels: PathBuf,
    pub out: PathBuf,
    pub format: MaskFormat,
    pub default_dims: (u32, u32),
}

/// File-system-safe stem for an image id.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Name of the mask file for one (image, class) pair.
pub fn mask_file_name(image_id: &str, class: LaneClass, format: MaskFormat) -> String {
    let ext = match format {
        MaskFormat::Rle => "rle.json",
        MaskFormat::Pgm => "pgm",
    };
    format!("{}.{}.{ext}", sanitize_id(image_id), class.name())
}

/// Writes the union mask of every (image, class) pair with at least one
/// polygon; returns the number of files written.
pub fn cmd_rasterize(opts: &RasterizeOptions) -> Result<usize, CliError> {
    let index = load_index(&opts.labels, opts.default_dims)?;
    fs::create_dir_all(&opts.out).map_err(|e| CliError::Io {
        context: format!("creating {}", opts.out.display()),
        source: e,
    })?;
    let mut names: BTreeMap<String, &str> = BTreeMap::new();
    let mut written = 0;
    for record in index.records() {
        for class in LaneClass::ALL {
            let polygons: Vec<_> = record.labels.iter().filter(|l| l.class_id == class).collect();
            if polygons.is_empty() {
                continue;
            }
            let mut mask = BitMask::new(record.width, record.height);
            for p in polygons {
                mask.union_with(&rasterize_polygon(&p.vertices, record.width, record.height)?)?;
            }
            let name = mask_file_name(&record.image_id, class, opts.format);
            if let Some(other) = names.insert(name.clone(), &record.image_id) {
                return Err(CliError::BadInput(format!(
                    "image ids `{other}` and `{}` both map to mask file {name}",
                    record.image_id
                )));
            }
            write_atomically(&opts.out.join(&name), |w| {
                match opts.format {
                    MaskFormat::Rle => {
                        serde_json::to_writer(&mut *w, &rle_encode(&mask)).map_err(|e| CliError::Io {
                            context: format!("writing {name}"),
                            source: e.into(),
                        })?
                    }
                    MaskFormat::Pgm => write_pgm(&mask, w)?,
                }
                Ok(())
            })?;
            written += 1;
        }
    }
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct EvalCommandOptions {
    pub labels: PathBuf,
    pub predictions: PathBuf,
    pub match_config: MatchConfig,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub threads: Option<usize>,
    pub strict_orphans: bool,
    pub stamp: bool,
    pub default_dims: (u32, u32),
}

/// Evaluates predictions and writes the requested report files. Ground-truth
/// frames without drivable area are left out, as in preprocessing.
pub fn cmd_eval(opts: &EvalCommandOptions) -> Result<EvalReport, CliError> {
    opts.match_config.validate()?;
    let (index, dropped) = filter_drivable(load_index(&opts.labels, opts.default_dims)?);
    if !dropped.dropped_ids.is_empty() {
        log::info!(
            "ignoring {} ground-truth frames without drivable area",
            dropped.dropped_ids.len()
        );
    }
    let file = File::open(&opts.predictions)
        .map_err(|e| CliError::BadInput(format!("cannot read {}: {e}", opts.predictions.display())))?;
    let detections = read_predictions(BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::in_file(&opts.predictions, e))?;
    log::info!("{} predictions for {} frames", detections.len(), index.len());

    let eval_opts = EvalOptions {
        strict_orphans: opts.strict_orphans,
    };
    let run = || evaluate_with_options(&index, &detections, &opts.match_config, &eval_opts);
    let mut report = match opts.threads {
        Some(0) => return Err(CliError::BadInput("--threads must be at least 1".to_string())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    if opts.stamp {
        report.stamp = Some(humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string());
    }
    if let Some(path) = &opts.out {
        write_atomically(path, |w| Ok(report.write_json(w)?))?;
    }
    if let Some(path) = &opts.csv {
        write_atomically(path, |w| Ok(report.write_csv(w)?))?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub params: SynthParams,
    pub out: PathBuf,
    pub predictions: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub n_images: usize,
    pub n_labels: usize,
    pub n_predictions: usize,
}

pub fn cmd_synth(opts: &SynthOptions) -> Result<SynthSummary, CliError> {
    let suite = generate_suite(&opts.params)?;
    write_atomically(&opts.out, |w| {
        write_normalized(&suite.index, w)?;
        Ok(())
    })?;
    write_atomically(&opts.predictions, |w| Ok(write_predictions(&suite.detections, w)?))?;
    Ok(SynthSummary {
        n_images: suite.index.len(),
        n_labels: suite.index.records().iter().map(|r| r.labels.len()).sum(),
        n_predictions: suite.detections.len(),
    })
}

#[derive(Clone, Debug)]
pub struct AnchorOptions {
    pub config: AnchorConfig,
    pub grid: (usize, usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct AnchorListing {
    pub config: AnchorConfig,
    /// `[rows, cols]` of the feature grid.
    pub grid: [usize; 2],
    pub count: usize,
    /// `[x, y, w, h]` per anchor, row-major by cell, then ratio, then scale.
    pub anchors: Vec<BBox>,
}

pub fn cmd_anchors(opts: &AnchorOptions) -> Result<AnchorListing, CliError> {
    let anchors = generate_anchors(&opts.config, opts.grid)?;
    Ok(AnchorListing {
        config: opts.config.clone(),
        grid: [opts.grid.0, opts.grid.1],
        count: anchors.len(),
        anchors,
    })
}

#[derive(Clone, Debug)]
pub struct RoiDemoOptions {
    pub grid: (usize, usize),
    pub field: FieldKind,
    pub value: f64,
    pub roi: BBox,
    pub scale: f64,
    pub bins: (usize, usize),
    pub sampling_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PooledOutput {
    /// `bins` rows of pooled values.
    pub values: Vec<Vec<f64>>,
    /// Feature-cell offsets between the exact region and the one sampled.
    pub misalignment: Misalignment,
    pub max_misalignment: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoiDemo {
    pub grid: [usize; 2],
    pub field: FieldKind,
    pub roi: BBox,
    pub spatial_scale: f64,
    /// The roi in feature coordinates, before any rounding.
    pub scaled_roi: BBox,
    pub roi_pool: PooledOutput,
    pub roi_align: PooledOutput,
}

fn rows(grid: &FeatureGrid) -> Vec<Vec<f64>> {
    grid.values().chunks(grid.width()).map(<[f64]>::to_vec).collect()
}

pub fn cmd_roi_demo(opts: &RoiDemoOptions) -> Result<RoiDemo, CliError> {
    let (h, w) = opts.grid;
    let feat = FeatureGrid::from_fn(1, h, w, |_, _, col| match opts.field {
        FieldKind::Constant => opts.value,
        FieldKind::Ramp => col as f64,
    })?;
    let spec = RoiSpec::new(opts.roi, opts.scale, opts.bins).with_sampling_points(opts.sampling_points);
    let (pooled, pool_offsets) = roi_pool(&feat, &spec)?;
    let aligned = roi_align(&feat, &spec)?;
    let align_offsets = roi_align_misalignment(&spec);
    debug_assert_eq!(pool_offsets, misalignment_report(&opts.roi, opts.scale));
    Ok(RoiDemo {
        grid: [h, w],
        field: opts.field,
        roi: opts.roi,
        spatial_scale: opts.scale,
        scaled_roi: spec.scaled_region(),
        roi_pool: PooledOutput {
            values: rows(&pooled),
            misalignment: pool_offsets,
            max_misalignment: pool_offsets.max(),
        },
        roi_align: PooledOutput {
            values: rows(&aligned),
            misalignment: align_offsets,
            max_misalignment: align_offsets.max(),
        },
    })
}
