//! Detection matching, precision-recall curves, interpolated AP and
//! condition-stratified mAP reports.
//!
//! AP uses all-point interpolation: each precision is replaced by the maximum
//! precision at any equal or higher recall, then integrated over recall.
//! Detections of a class are ranked globally across images by descending
//! score; ties keep input order.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Axis, DatasetIndex, ImageRecord, LaneClass};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, mask_iou, mask_to_bbox, rasterize_polygon, rle_decode, BBox, BitMask, RleMask};

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Box(BBox),
    Mask(RleMask),
}

/// One predicted instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: LaneClass,
    pub score: f64,
    pub geometry: Geometry,
}

/// Wire form of a prediction line: exactly one of `bbox` / `rle` is present.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    image_id: String,
    class_id: LaneClass,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rle: Option<RleMask>,
}

impl Detection {
    fn from_line(line: DetectionLine) -> std::result::Result<Self, String> {
        if !(line.score.is_finite() && (0.0..=1.0).contains(&line.score)) {
            return Err(format!("score {} is outside [0, 1]", line.score));
        }
        let geometry = match (line.bbox, line.rle) {
            (Some(b), None) if b.is_valid() => Geometry::Box(b),
            (Some(_), None) => return Err("bbox needs finite coordinates and non-negative size".to_string()),
            (None, Some(r)) => {
                r.validate().map_err(|e| e.to_string())?;
                Geometry::Mask(r)
            }
            (Some(_), Some(_)) => return Err("both `bbox` and `rle` given".to_string()),
            (None, None) => return Err("one of `bbox` or `rle` is required".to_string()),
        };
        Ok(Self {
            image_id: line.image_id,
            class_id: line.class_id,
            score: line.score,
            geometry,
        })
    }

    /// Serializes to a single JSON Lines record (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let (bbox, rle) = match &self.geometry {
            Geometry::Box(b) => (Some(*b), None),
            Geometry::Mask(r) => (None, Some(r.clone())),
        };
        let line = DetectionLine {
            image_id: self.image_id.clone(),
            class_id: self.class_id,
            score: self.score,
            bbox,
            rle,
        };
        serde_json::to_string(&line).expect("detections always serialize")
    }
}

/// Streams detections from a JSON Lines source. Blank lines are skipped.
pub fn read_predictions<R: BufRead>(source: R) -> impl Iterator<Item = Result<Detection>> {
    source.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let text = match line {
            Ok(t) => t,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        if text.trim().is_empty() {
            return None;
        }
        let parsed = serde_json::from_str::<DetectionLine>(&text).map_err(|e| {
            use serde_json::error::Category;
            match e.classify() {
                Category::Data => Error::SchemaViolation {
                    location: format!("prediction line {line_no}"),
                    message: e.to_string(),
                },
                _ => Error::MalformedInput {
                    line: line_no,
                    column: e.column(),
                    message: e.to_string(),
                },
            }
        });
        Some(parsed.and_then(|l| {
            Detection::from_line(l).map_err(|message| Error::SchemaViolation {
                location: format!("prediction line {line_no}"),
                message,
            })
        }))
    })
}

pub fn write_predictions<W: Write>(dets: &[Detection], mut sink: W) -> Result<()> {
    for det in dets {
        writeln!(sink, "{}", det.to_json_line())?;
    }
    sink.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    /// Masks are reduced to their tight pixel boxes before comparison.
    #[default]
    Box,
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            iou_kind: IouKind::Box,
        }
    }
}

impl MatchConfig {
    pub fn new(iou_threshold: f64, iou_kind: IouKind) -> Self {
        Self {
            iou_threshold,
            iou_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_threshold > 0.0 && self.iou_threshold <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "IoU threshold {} is outside (0, 1]",
                self.iou_threshold
            )))
        }
    }
}

/// Comparable shape of a detection or ground-truth instance under one [`IouKind`].
enum Shape {
    Box(Option<BBox>),
    Mask(BitMask),
}

impl Shape {
    fn iou(&self, other: &Shape) -> f64 {
        match (self, other) {
            (Shape::Box(Some(a)), Shape::Box(Some(b))) => box_iou(a, b),
            (Shape::Mask(a), Shape::Mask(b)) => mask_iou(a, b).unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

fn detection_shape(det: &Detection, record: &ImageRecord, kind: IouKind) -> Result<Shape> {
    let mismatch = |message: String| Error::GeometryMismatch {
        image_id: det.image_id.clone(),
        message,
    };
    let decode = |rle: &RleMask| -> Result<BitMask> {
        if (rle.width, rle.height) != (record.width, record.height) {
            return Err(mismatch(format!(
                "mask is {}x{} but the image is {}x{}",
                rle.width, rle.height, record.width, record.height
            )));
        }
        rle_decode(rle)
    };
    match (&det.geometry, kind) {
        (Geometry::Box(b), IouKind::Box) => Ok(Shape::Box(Some(*b))),
        (Geometry::Mask(rle), IouKind::Box) => Ok(Shape::Box(mask_to_bbox(&decode(rle)?))),
        (Geometry::Mask(rle), IouKind::Mask) => Ok(Shape::Mask(decode(rle)?)),
        (Geometry::Box(_), IouKind::Mask) => Err(mismatch("box-only detection under mask-level matching".to_string())),
    }
}

fn ground_truth_shapes(record: &ImageRecord, kind: IouKind) -> Result<Vec<Shape>> {
    record
        .labels
        .iter()
        .map(|label| {
            let mask = rasterize_polygon(&label.vertices, record.width, record.height)?;
            Ok(match kind {
                IouKind::Box => Shape::Box(mask_to_bbox(&mask)),
                IouKind::Mask => Shape::Mask(mask),
            })
        })
        .collect()
}

/// Match outcome for one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageMatch {
    /// True-positive flag per detection, in input order.
    pub det_tp: Vec<bool>,
    /// Matched flag per ground-truth label, in record order.
    pub gt_matched: Vec<bool>,
}

/// Greedy matching of one image's detections against its labels.
///
/// Detections are taken by descending score (lower input index on ties).
/// Each takes the unmatched same-class label with the highest IoU (lower label
/// index on ties) when that IoU reaches the threshold; otherwise it is a false
/// positive.
pub fn match_detections<D: Borrow<Detection>>(
    dets: &[D],
    record: &ImageRecord,
    cfg: &MatchConfig,
) -> Result<ImageMatch> {
    cfg.validate()?;
    if let Some(stray) = dets.iter().map(Borrow::borrow).find(|d| d.image_id != record.image_id) {
        return Err(Error::InvalidConfig(format!(
            "detection for `{}` matched against image `{}`",
            stray.image_id, record.image_id
        )));
    }
    let gts = ground_truth_shapes(record, cfg.iou_kind)?;
    let shapes = dets
        .iter()
        .map(|d| detection_shape(d.borrow(), record, cfg.iou_kind))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].borrow().score.total_cmp(&dets[a].borrow().score));

    let mut result = ImageMatch {
        det_tp: vec![false; dets.len()],
        gt_matched: vec![false; gts.len()],
    };
    for d in order {
        let class = dets[d].borrow().class_id;
        let mut best: Option<(usize, f64)> = None;
        for (g, label) in record.labels.iter().enumerate() {
            if label.class_id != class || result.gt_matched[g] {
                continue;
            }
            let iou = shapes[d].iou(&gts[g]);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou >= cfg.iou_threshold {
                result.gt_matched[g] = true;
                result.det_tp[d] = true;
            }
        }
    }
    Ok(result)
}

/// A ranked detection outcome feeding the precision-recall sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub tp: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection in ranking order.
    pub points: Vec<(f64, f64)>,
    pub n_gt: usize,
    /// Cumulative true-positive count per point. When present, AP is summed
    /// as an exact fraction instead of from the rounded points.
    #[serde(skip)]
    pub cumulative_tp: Option<Vec<usize>>,
}

impl PrCurve {
    /// A curve given only as `(recall, precision)` points.
    pub fn from_points(points: Vec<(f64, f64)>, n_gt: usize) -> Self {
        Self {
            points,
            n_gt,
            cumulative_tp: None,
        }
    }
}

/// Sweeps detections by descending score (stable, so ties keep slice order).
pub fn precision_recall(matches: &[ScoredMatch], n_gt: usize) -> PrCurve {
    if n_gt == 0 {
        return PrCurve::from_points(Vec::new(), 0);
    }
    let mut ranked: Vec<&ScoredMatch> = matches.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut tp = 0usize;
    let mut counts = Vec::with_capacity(ranked.len());
    let points = ranked
        .iter()
        .enumerate()
        .map(|(k, m)| {
            tp += m.tp as usize;
            counts.push(tp);
            (tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect();
    PrCurve {
        points,
        n_gt,
        cumulative_tp: Some(counts),
    }
}

/// All-point interpolated AP; `None` when the class has no ground truth.
pub fn average_precision(curve: &PrCurve) -> Option<f64> {
    if curve.n_gt == 0 {
        return None;
    }
    let ap = match &curve.cumulative_tp {
        Some(counts) if counts.len() == curve.points.len() => counted_ap(counts, curve.n_gt),
        _ => interpolated_area(&curve.points),
    };
    Some(ap.clamp(0.0, 1.0))
}

fn interpolated_area(points: &[(f64, f64)]) -> f64 {
    let mut interpolated: Vec<f64> = points.iter().map(|&(_, p)| p).collect();
    for k in (0..interpolated.len().saturating_sub(1)).rev() {
        interpolated[k] = interpolated[k].max(interpolated[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(recall, _), &precision) in points.iter().zip(&interpolated) {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced non-negative fraction; `None` once a 128-bit operation overflows.
#[derive(Clone, Copy)]
struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    fn checked_add(self, other: Fraction) -> Option<Fraction> {
        let g = gcd(self.den, other.den);
        let left = self.num.checked_mul(other.den / g)?;
        let right = other.num.checked_mul(self.den / g)?;
        let num = left.checked_add(right)?;
        let den = (self.den / g).checked_mul(other.den)?;
        let r = gcd(num, den).max(1);
        Some(Fraction {
            num: num / r,
            den: den / r,
        })
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// AP from cumulative TP counts: each TP step adds `1 / n_gt` of recall at the
/// best precision `tp_j / j` over all later ranks `j`.
fn counted_ap(counts: &[usize], n_gt: usize) -> f64 {
    let mut best = vec![(0u128, 1u128); counts.len()];
    let mut running = (0u128, 1u128);
    for k in (0..counts.len()).rev() {
        let cand = (counts[k] as u128, (k + 1) as u128);
        if cand.0 * running.1 > running.0 * cand.1 {
            running = cand;
        }
        best[k] = running;
    }

    let mut exact = Some(Fraction { num: 0, den: 1 });
    let mut spill = 0.0;
    let mut prev = 0usize;
    for (k, &tp) in counts.iter().enumerate() {
        if tp > prev {
            let (num, den) = best[k];
            let term = Fraction { num, den };
            match exact.and_then(|acc| acc.checked_add(term)) {
                Some(sum) => exact = Some(sum),
                None => spill += exact.take().map_or(0.0, Fraction::to_f64) + term.to_f64(),
            }
        }
        prev = tp;
    }
    match exact.and_then(|f| f.den.checked_mul(n_gt as u128).map(|den| Fraction { num: f.num, den })) {
        Some(f) => f.to_f64(),
        None => (exact.map_or(0.0, Fraction::to_f64) + spill) / n_gt as f64,
    }
}

/// Unweighted mean of the defined per-class APs.
pub fn mean_ap(per_class: &BTreeMap<LaneClass, Option<f64>>) -> Result<f64> {
    let defined: Vec<f64> = per_class.values().filter_map(|&ap| ap).collect();
    if defined.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Count detections for unknown images as false positives instead of dropping them.
    pub strict_orphans: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassSummary {
    pub n_gt: usize,
    pub n_detections: usize,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumSummary {
    pub n_images: usize,
    pub n_gt: usize,
    pub per_class_ap: BTreeMap<LaneClass, Option<f64>>,
    /// Absent when the stratum has no ground-truth instances.
    pub map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: MatchConfig,
    /// How strata rank detections: each stratum is re-ranked on its own.
    pub stratum_ranking: String,
    pub n_images: usize,
    pub n_detections: usize,
    pub orphan_detections: usize,
    pub per_class: BTreeMap<LaneClass, ClassSummary>,
    pub map: f64,
    pub strata: BTreeMap<Axis, BTreeMap<String, StratumSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
}

impl EvalReport {
    pub fn per_class_ap(&self) -> BTreeMap<LaneClass, Option<f64>> {
        self.per_class.iter().map(|(&c, s)| (c, s.ap)).collect()
    }

    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut sink, self).map_err(std::io::Error::from)?;
        writeln!(sink)?;
        Ok(())
    }

    /// Flat table: one `all,all` row, then one row per (axis, tag).
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(sink, "axis,tag,n_images,n_gt,ap_direct,ap_alternative,map")?;
        let total_gt: usize = self.per_class.values().map(|s| s.n_gt).sum();
        let ap = |c: LaneClass| self.per_class.get(&c).and_then(|s| s.ap);
        writeln!(
            sink,
            "all,all,{},{},{},{},{}",
            self.n_images,
            total_gt,
            cell(ap(LaneClass::Direct)),
            cell(ap(LaneClass::Alternative)),
            self.map
        )?;
        for (axis, tags) in &self.strata {
            for (tag, s) in tags {
                let ap = |c: LaneClass| s.per_class_ap.get(&c).copied().flatten();
                writeln!(
                    sink,
                    "{},{},{},{},{},{},{}",
                    axis.as_str(),
                    tag,
                    s.n_images,
                    s.n_gt,
                    cell(ap(LaneClass::Direct)),
                    cell(ap(LaneClass::Alternative)),
                    cell(s.map)
                )?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}

/// Per-image outcome: `(global detection index, class, score, tp)` plus label counts.
struct ImageOutcome {
    ranked: Vec<(usize, LaneClass, f64, bool)>,
    n_gt: BTreeMap<LaneClass, usize>,
}

/// `(n_gt, n_detections, ap)` per class.
type ClassTally = BTreeMap<LaneClass, (usize, usize, Option<f64>)>;

fn class_aps<'a>(
    outcomes: impl Iterator<Item = &'a ImageOutcome>,
    extra_fps: &[(usize, LaneClass, f64)],
) -> (ClassTally, usize) {
    let mut entries: BTreeMap<LaneClass, Vec<(usize, f64, bool)>> = BTreeMap::new();
    let mut n_gt: BTreeMap<LaneClass, usize> = BTreeMap::new();
    let mut n_images = 0;
    for o in outcomes {
        n_images += 1;
        for (&c, &n) in &o.n_gt {
            *n_gt.entry(c).or_default() += n;
        }
        for &(idx, c, score, tp) in &o.ranked {
            entries.entry(c).or_default().push((idx, score, tp));
        }
    }
    for &(idx, c, score) in extra_fps {
        entries.entry(c).or_default().push((idx, score, false));
    }
    let summary = LaneClass::ALL
        .iter()
        .map(|&c| {
            let mut list = entries.remove(&c).unwrap_or_default();
            list.sort_by_key(|&(idx, _, _)| idx);
            let matches: Vec<ScoredMatch> = list.iter().map(|&(_, score, tp)| ScoredMatch { score, tp }).collect();
            let gt = n_gt.get(&c).copied().unwrap_or(0);
            let ap = average_precision(&precision_recall(&matches, gt));
            (c, (gt, matches.len(), ap))
        })
        .collect();
    (summary, n_images)
}

pub fn evaluate(index: &DatasetIndex, dets: &[Detection], cfg: &MatchConfig) -> Result<EvalReport> {
    evaluate_with_options(index, dets, cfg, &EvalOptions::default())
}

/// Overall and per-condition mAP.
///
/// Images are matched independently (in parallel); every stratum then builds
/// its own ranking from the detections of its images.
pub fn evaluate_with_options(
    index: &DatasetIndex,
    dets: &[Detection],
    cfg: &MatchConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut orphans = Vec::new();
    for (i, det) in dets.iter().enumerate() {
        if index.get(&det.image_id).is_some() {
            by_image.entry(det.image_id.as_str()).or_default().push(i);
        } else {
            orphans.push((i, det.class_id, det.score));
        }
    }
    if !orphans.is_empty() {
        log::warn!(
            "{} detection(s) reference images outside the index; {}",
            orphans.len(),
            if opts.strict_orphans {
                "counted as false positives"
            } else {
                "dropped"
            }
        );
    }

    let outcomes = index
        .records()
        .par_iter()
        .map(|record| {
            let idx = by_image.get(record.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let image_dets: Vec<&Detection> = idx.iter().map(|&i| &dets[i]).collect();
            let m = match_detections(&image_dets, record, cfg)?;
            let ranked = idx
                .iter()
                .zip(&m.det_tp)
                .map(|(&i, &tp)| (i, dets[i].class_id, dets[i].score, tp))
                .collect();
            let n_gt = LaneClass::ALL.iter().map(|&c| (c, record.n_labels(c))).collect();
            Ok(ImageOutcome { ranked, n_gt })
        })
        .collect::<Result<Vec<_>>>()?;

    let extra = if opts.strict_orphans { orphans.as_slice() } else { &[] };
    let (overall, n_images) = class_aps(outcomes.iter(), extra);
    let per_class: BTreeMap<LaneClass, ClassSummary> = overall
        .into_iter()
        .map(|(c, (n_gt, n_detections, ap))| (c, ClassSummary { n_gt, n_detections, ap }))
        .collect();
    let map = mean_ap(&per_class.iter().map(|(&c, s)| (c, s.ap)).collect())?;

    let mut strata = BTreeMap::new();
    for axis in Axis::ALL {
        let mut members: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
        for (i, record) in index.records().iter().enumerate() {
            members.entry(record.conditions.tag(axis)).or_default().push(i);
        }
        let tags = members
            .into_iter()
            .map(|(tag, rows)| {
                let (classes, n_images) = class_aps(rows.iter().map(|&i| &outcomes[i]), &[]);
                let per_class_ap: BTreeMap<_, _> = classes.iter().map(|(&c, &(_, _, ap))| (c, ap)).collect();
                let summary = StratumSummary {
                    n_images,
                    n_gt: classes.values().map(|&(gt, _, _)| gt).sum(),
                    map: mean_ap(&per_class_ap).ok(),
                    per_class_ap,
                };
                (tag.to_string(), summary)
            })
            .collect();
        strata.insert(axis, tags);
    }

    Ok(EvalReport {
        config: *cfg,
        stratum_ranking: "per-stratum".to_string(),
        n_images,
        n_detections: dets.len() - orphans.len() + extra.len(),
        orphan_detections: orphans.len(),
        per_class,
        map,
        strata,
        stamp: None,
    })
}
