//! Region-proposal geometry: anchors, box deltas, non-maximum suppression,
//! RoIPool and RoIAlign.
//!
//! Feature values are located at cell centers: cell `(row, col)` of a grid
//! sits at continuous coordinate `(col + 0.5, row + 0.5)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub base_size: f64,
    pub scales: Vec<f64>,
    /// Height-to-width aspect ratios.
    pub ratios: Vec<f64>,
    pub feature_stride: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            base_size: 16.0,
            scales: vec![8.0, 16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
            feature_stride: 16.0,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.base_size) || !positive(self.feature_stride) {
            return Err(Error::InvalidConfig(
                "anchor base size and stride must be positive".to_string(),
            ));
        }
        if self.scales.is_empty() || self.ratios.is_empty() {
            return Err(Error::InvalidConfig(
                "anchor scales and ratios must be non-empty".to_string(),
            ));
        }
        if !self.scales.iter().chain(&self.ratios).all(|&v| positive(v)) {
            return Err(Error::InvalidConfig(
                "anchor scales and ratios must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Tiles anchors over a `cells_h x cells_w` feature grid.
///
/// Order: row-major by cell, then by ratio, then by scale. Each anchor keeps
/// area `(base * scale)^2` with `h / w == ratio`.
pub fn generate_anchors(cfg: &AnchorConfig, (cells_h, cells_w): (usize, usize)) -> Result<Vec<BBox>> {
    cfg.validate()?;
    if cells_h == 0 || cells_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "anchor grid {cells_h}x{cells_w} is empty"
        )));
    }
    let shapes: Vec<(f64, f64)> = cfg
        .ratios
        .iter()
        .flat_map(|&ratio| {
            cfg.scales.iter().map(move |&scale| {
                let side = cfg.base_size * scale;
                (side * (1.0 / ratio).sqrt(), side * ratio.sqrt())
            })
        })
        .collect();

    let mut anchors = Vec::with_capacity(cells_h * cells_w * shapes.len());
    for i in 0..cells_h {
        let cy = (i as f64 + 0.5) * cfg.feature_stride;
        for j in 0..cells_w {
            let cx = (j as f64 + 0.5) * cfg.feature_stride;
            anchors.extend(shapes.iter().map(|&(w, h)| BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)));
        }
    }
    Ok(anchors)
}

/// Center offsets normalized by the anchor size plus log-scale size ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

fn require_positive(b: &BBox) -> Result<()> {
    if b.w > 0.0 && b.h > 0.0 && b.is_valid() {
        Ok(())
    } else {
        Err(Error::NonPositiveBox { w: b.w, h: b.h })
    }
}

pub fn encode_deltas(anchor: &BBox, target: &BBox) -> Result<Deltas> {
    require_positive(anchor)?;
    require_positive(target)?;
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    Ok(Deltas {
        dx: (tcx - acx) / anchor.w,
        dy: (tcy - acy) / anchor.h,
        dw: (target.w / anchor.w).ln(),
        dh: (target.h / anchor.h).ln(),
    })
}

pub fn decode_deltas(anchor: &BBox, d: &Deltas) -> Result<BBox> {
    require_positive(anchor)?;
    let (acx, acy) = anchor.center();
    let cx = acx + d.dx * anchor.w;
    let cy = acy + d.dy * anchor.h;
    let w = anchor.w * d.dw.exp();
    let h = anchor.h * d.dh.exp();
    Ok(BBox::new(cx - w / 2.0, cy - h / 2.0, w, h))
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending score (lower index first on ties); a box is
/// dropped when its IoU with an already kept box is strictly above
/// `iou_threshold`. Returns kept indices in selection order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::LengthMismatch {
            boxes: boxes.len(),
            scores: scores.len(),
        });
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidConfig(format!(
            "NMS threshold {iou_threshold} is outside [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        if kept.iter().all(|&k| box_iou(&boxes[k], &boxes[idx]) <= iou_threshold) {
            kept.push(idx);
        }
    }
    Ok(kept)
}

/// Channel-major feature tensor `[channels][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::InvalidConfig(format!(
                "feature grid {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(
                "feature grid dimensions must be positive".to_string(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("feature values must be finite".to_string()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Grid whose value at cell `(c, row, col)` is `f(c, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    values.push(f(c, r, col));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[(channel * self.height + row) * self.width + col]
    }

    /// Bilinear sample at continuous `(x, y)`, clamping to the border cells.
    pub fn sample_bilinear(&self, channel: usize, x: f64, y: f64) -> f64 {
        let u = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let c0 = (u.floor() as usize).min(self.width - 1);
        let r0 = (v.floor() as usize).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fx = u - c0 as f64;
        let fy = v - r0 as f64;
        // Lerp form keeps constant neighbourhoods exactly constant.
        let top = lerp(self.at(channel, r0, c0), self.at(channel, r0, c1), fx);
        let bottom = lerp(self.at(channel, r1, c0), self.at(channel, r1, c1), fx);
        lerp(top, bottom, fy)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    /// Region in image coordinates.
    pub roi: BBox,
    /// Image-to-feature coordinate factor, e.g. `1/16` for stride 16.
    pub spatial_scale: f64,
    /// `(bins_h, bins_w)`.
    pub output_size: (usize, usize),
    /// Samples per bin along each axis (RoIAlign only).
    pub sampling_points: usize,
}

impl RoiSpec {
    pub fn new(roi: BBox, spatial_scale: f64, output_size: (usize, usize)) -> Self {
        Self {
            roi,
            spatial_scale,
            output_size,
            sampling_points: 2,
        }
    }

    pub fn with_sampling_points(mut self, n: usize) -> Self {
        self.sampling_points = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.spatial_scale.is_finite() && self.spatial_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spatial scale {} must be positive",
                self.spatial_scale
            )));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 || self.sampling_points == 0 {
            return Err(Error::InvalidConfig(
                "output size and sampling points must be at least 1".to_string(),
            ));
        }
        if !self.roi.is_valid() {
            return Err(Error::NonPositiveBox {
                w: self.roi.w,
                h: self.roi.h,
            });
        }
        Ok(())
    }

    /// The region in continuous feature coordinates.
    pub fn scaled_region(&self) -> BBox {
        let s = self.spatial_scale;
        BBox::new(self.roi.x * s, self.roi.y * s, self.roi.w * s, self.roi.h * s)
    }
}

/// Distance, in feature cells, between each exact region edge and the edge the
/// pooling operation actually used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Misalignment {
    pub fn max(&self) -> f64 {
        self.left.max(self.top).max(self.right).max(self.bottom)
    }

    fn between(exact: &BBox, used: &BBox) -> Self {
        Self {
            left: (exact.x - used.x).abs(),
            top: (exact.y - used.y).abs(),
            right: (exact.right() - used.right()).abs(),
            bottom: (exact.bottom() - used.bottom()).abs(),
        }
    }
}

/// Floor-quantized region used by RoIPool, as integer cell bounds `[x1, x2) x [y1, y2)`.
fn quantized_region(spec: &RoiSpec) -> (i64, i64, i64, i64) {
    let exact = spec.scaled_region();
    let x1 = exact.x.floor() as i64;
    let y1 = exact.y.floor() as i64;
    let x2 = (exact.right().floor() as i64).max(x1 + 1);
    let y2 = (exact.bottom().floor() as i64).max(y1 + 1);
    (x1, y1, x2, y2)
}

/// Fractional parts discarded when RoIPool floors the scaled roi edges.
pub fn misalignment_report(roi: &BBox, spatial_scale: f64) -> Misalignment {
    let exact = BBox::new(
        roi.x * spatial_scale,
        roi.y * spatial_scale,
        roi.w * spatial_scale,
        roi.h * spatial_scale,
    );
    let floored = BBox::from_corners(
        exact.x.floor(),
        exact.y.floor(),
        exact.right().floor(),
        exact.bottom().floor(),
    );
    Misalignment::between(&exact, &floored)
}

/// Offsets of the region RoIAlign samples from, relative to the exact scaled roi.
pub fn roi_align_misalignment(spec: &RoiSpec) -> Misalignment {
    Misalignment::between(&spec.scaled_region(), &roi_align_region(spec))
}

/// Region RoIAlign distributes its bins over: the scaled roi, unquantized.
pub fn roi_align_region(spec: &RoiSpec) -> BBox {
    spec.scaled_region()
}

/// Clips `[start, end)` to `[0, len)`, falling back to the nearest cell when empty.
fn clip_range(start: i64, end: i64, len: usize) -> (usize, usize) {
    let len = len as i64;
    let (s, e) = (start.clamp(0, len), end.clamp(0, len));
    if s < e {
        (s as usize, e as usize)
    } else if end <= 0 {
        (0, 1)
    } else {
        (len as usize - 1, len as usize)
    }
}

/// Max-pools each bin of the floor-quantized roi.
///
/// Also returns the quantization offsets this call introduced.
pub fn roi_pool(feat: &FeatureGrid, spec: &RoiSpec) -> Result<(FeatureGrid, Misalignment)> {
    spec.validate()?;
    let (x1, y1, x2, y2) = quantized_region(spec);
    if x2 <= 0 || y2 <= 0 || x1 >= feat.width as i64 || y1 >= feat.height as i64 {
        return Err(Error::RoiOutsideGrid {
            width: feat.width,
            height: feat.height,
        });
    }
    let (bins_h, bins_w) = spec.output_size;
    let (len_w, len_h) = (x2 - x1, y2 - y1);
    let bin_bounds = |bin: usize, bins: usize, origin: i64, len: i64| {
        let (b, n) = (bin as i64, bins as i64);
        let start = origin + (b * len) / n;
        let end = origin + ((b + 1) * len + n - 1) / n;
        (start, end)
    };

    let mut out = Vec::with_capacity(feat.channels * bins_h * bins_w);
    for c in 0..feat.channels {
        for ph in 0..bins_h {
            let (rs, re) = bin_bounds(ph, bins_h, y1, len_h);
            let (rs, re) = clip_range(rs, re, feat.height);
            for pw in 0..bins_w {
                let (cs, ce) = bin_bounds(pw, bins_w, x1, len_w);
                let (cs, ce) = clip_range(cs, ce, feat.width);
                let mut best = f64::NEG_INFINITY;
                for r in rs..re {
                    for col in cs..ce {
                        best = best.max(feat.at(c, r, col));
                    }
                }
                out.push(best);
            }
        }
    }
    let offsets = misalignment_report(&spec.roi, spec.spatial_scale);
    Ok((FeatureGrid::new(feat.channels, bins_h, bins_w, out)?, offsets))
}

/// Averages `sampling_points^2` bilinear samples per bin, placed at the centers
/// of a regular sub-grid of the bin. No coordinate is ever rounded.
pub fn roi_align(feat: &FeatureGrid, spec: &RoiSpec) -> Result<FeatureGrid> {
    spec.validate()?;
    let region = roi_align_region(spec);
    if region.w <= 0.0 || region.h <= 0.0 {
        return Err(Error::NonPositiveBox {
            w: region.w,
            h: region.h,
        });
    }
    if region.right() <= 0.0
        || region.bottom() <= 0.0
        || region.x >= feat.width as f64
        || region.y >= feat.height as f64
    {
        return Err(Error::RoiOutsideGrid {
            width: feat.width,
            height: feat.height,
        });
    }
    let (bins_h, bins_w) = spec.output_size;
    let n = spec.sampling_points;
    let bin_w = region.w / bins_w as f64;
    let bin_h = region.h / bins_h as f64;

    let mut out = Vec::with_capacity(feat.channels * bins_h * bins_w);
    for c in 0..feat.channels {
        for ph in 0..bins_h {
            for pw in 0..bins_w {
                // Running mean: exact for constant fields.
                let mut mean = 0.0;
                let mut k = 0usize;
                for iy in 0..n {
                    let y = region.y + ph as f64 * bin_h + (iy as f64 + 0.5) * bin_h / n as f64;
                    for ix in 0..n {
                        let x = region.x + pw as f64 * bin_w + (ix as f64 + 0.5) * bin_w / n as f64;
                        k += 1;
                        mean += (feat.sample_bilinear(c, x, y) - mean) / k as f64;
                    }
                }
                out.push(mean);
            }
        }
    }
    FeatureGrid::new(feat.channels, bins_h, bins_w, out)
}

/// [`roi_align`] over many rois in parallel; results keep input order.
pub fn roi_align_batch(feat: &FeatureGrid, specs: &[RoiSpec]) -> Vec<Result<FeatureGrid>> {
    specs.par_iter().map(|spec| roi_align(feat, spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn anchor_counts_and_shapes() {
        let cfg = AnchorConfig {
            scales: vec![8.0],
            ..AnchorConfig::default()
        };
        let anchors = generate_anchors(&cfg, (3, 4)).unwrap();
        assert_eq!(anchors.len(), 36);

        // Cell (0, 0), ratio order 0.5, 1, 2.
        let square = anchors[1];
        assert_eq!(square.center(), (8.0, 8.0));
        assert_eq!((square.w, square.h), (128.0, 128.0));

        let tall = anchors[2];
        assert!((tall.w - 90.50966799187809).abs() < 1e-9);
        assert!((tall.h - 181.01933598375618).abs() < 1e-9);
        assert!((tall.w * tall.h - 128.0 * 128.0).abs() < 1e-6);
        assert!((tall.center().0 - 8.0).abs() < 1e-12);

        // Second cell of the first row is one stride to the right.
        assert_eq!(anchors[3].center().0, 24.0);
        // First cell of the second row is one stride down.
        assert_eq!(anchors[12].center(), (8.0, 24.0));
    }

    #[test]
    fn anchor_config_errors() {
        let bad = AnchorConfig {
            ratios: vec![1.0, 0.0],
            ..AnchorConfig::default()
        };
        assert!(generate_anchors(&bad, (1, 1)).is_err());
        assert!(generate_anchors(&AnchorConfig::default(), (0, 3)).is_err());
        assert_eq!(generate_anchors(&AnchorConfig::default(), (2, 2)).unwrap().len(), 36);
    }

    #[test]
    fn delta_cases() {
        let anchor = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(encode_deltas(&anchor, &anchor).unwrap(), Deltas::default());
        assert_eq!(decode_deltas(&anchor, &Deltas::default()).unwrap(), anchor);

        let d = encode_deltas(&anchor, &BBox::new(5.0, 5.0, 20.0, 10.0)).unwrap();
        assert!((d.dx - 1.0).abs() < EPS);
        assert!((d.dy - 0.5).abs() < EPS);
        assert!((d.dw - 2f64.ln()).abs() < EPS);
        assert!(d.dh.abs() < EPS);

        assert!(matches!(
            encode_deltas(&BBox::new(0.0, 0.0, 0.0, 5.0), &anchor),
            Err(Error::NonPositiveBox { .. })
        ));
        assert!(encode_deltas(&anchor, &BBox::new(0.0, 0.0, 3.0, 0.0)).is_err());
    }

    #[test]
    fn nms_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[a], &[0.3], 0.5).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.8, 0.9], 0.5).unwrap(), vec![1]);
        assert_eq!(nms(&[a, a], &[0.9, 0.9], 0.5).unwrap(), vec![0]);
        assert!(matches!(
            nms(&[a], &[0.1, 0.2], 0.5),
            Err(Error::LengthMismatch { boxes: 1, scores: 2 })
        ));
        assert!(nms(&[], &[], 0.5).unwrap().is_empty());
    }

    #[test]
    fn nms_chain_keeps_first_and_last() {
        // Unit-height strips: A-B and B-C overlap at 0.6, A-C at 1/3.
        let a = BBox::new(0.0, 0.0, 10.0, 1.0);
        let b = BBox::new(2.5, 0.0, 10.0, 1.0);
        let c = BBox::new(5.0, 0.0, 10.0, 1.0);
        assert!((box_iou(&a, &b) - 0.6).abs() < 1e-12);
        assert!((box_iou(&b, &c) - 0.6).abs() < 1e-12);
        assert!(box_iou(&a, &c) < 0.5);
        assert_eq!(nms(&[a, b, c], &[0.9, 0.8, 0.7], 0.5).unwrap(), vec![0, 2]);
    }

    #[test]
    fn nms_kept_count_can_drop_when_threshold_rises() {
        // B is only kept at the higher threshold, and then suppresses both C and D.
        let a = BBox::new(3.0, 0.0, 4.0, 10.0);
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let c = BBox::new(0.0, 0.0, 4.6, 10.0);
        let d = BBox::new(5.4, 0.0, 4.6, 10.0);
        let boxes = [a, b, c, d];
        let scores = [0.9, 0.8, 0.7, 0.6];
        assert_eq!(nms(&boxes, &scores, 0.30).unwrap(), vec![0, 2, 3]);
        assert_eq!(nms(&boxes, &scores, 0.45).unwrap(), vec![0, 1]);
        // No suppression at all once the threshold reaches 1.
        assert_eq!(nms(&boxes, &scores, 1.0).unwrap().len(), 4);
    }

    fn ramp_4x4() -> FeatureGrid {
        FeatureGrid::new(1, 4, 4, (0..16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn roi_pool_cases() {
        let constant = FeatureGrid::new(2, 5, 5, vec![3.25; 50]).unwrap();
        let spec = RoiSpec::new(BBox::new(0.3, 1.1, 3.0, 2.5), 1.0, (3, 2));
        let (out, _) = roi_pool(&constant, &spec).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.25));
        assert_eq!((out.channels(), out.height(), out.width()), (2, 3, 2));

        let full = RoiSpec::new(BBox::new(0.0, 0.0, 4.0, 4.0), 1.0, (2, 2));
        let (out, offsets) = roi_pool(&ramp_4x4(), &full).unwrap();
        assert_eq!(out.values(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(offsets, Misalignment::default());

        let shifted = RoiSpec::new(BBox::new(0.7, 0.7, 2.0, 2.0), 1.0, (2, 2));
        let aligned = RoiSpec::new(BBox::new(0.0, 0.0, 2.0, 2.0), 1.0, (2, 2));
        let (a, off) = roi_pool(&ramp_4x4(), &shifted).unwrap();
        let (b, _) = roi_pool(&ramp_4x4(), &aligned).unwrap();
        assert_eq!(a, b);
        assert!((off.left - 0.7).abs() < 1e-12);
        assert!((off.top - 0.7).abs() < 1e-12);
    }

    #[test]
    fn roi_pool_clipping() {
        // Half the roi hangs off the right edge; bins past the edge reuse the last column.
        let spec = RoiSpec::new(BBox::new(2.0, 0.0, 4.0, 4.0), 1.0, (1, 4));
        let (out, _) = roi_pool(&ramp_4x4(), &spec).unwrap();
        assert_eq!(out.values(), &[14.0, 15.0, 15.0, 15.0]);

        let outside = RoiSpec::new(BBox::new(10.0, 0.0, 2.0, 2.0), 1.0, (2, 2));
        assert!(matches!(
            roi_pool(&ramp_4x4(), &outside),
            Err(Error::RoiOutsideGrid { .. })
        ));
    }

    #[test]
    fn misalignment_cases() {
        let aligned = misalignment_report(&BBox::new(32.0, 16.0, 64.0, 48.0), 1.0 / 16.0);
        assert_eq!(aligned, Misalignment::default());

        let off = misalignment_report(&BBox::new(7.0, 0.0, 32.0, 32.0), 1.0 / 16.0);
        assert_eq!(off.left, 0.4375);
        assert_eq!(off.top, 0.0);
        assert_eq!(off.right, 0.4375);

        let spec = RoiSpec::new(BBox::new(7.0, 0.0, 32.0, 32.0), 1.0 / 16.0, (2, 2));
        assert_eq!(roi_align_misalignment(&spec), Misalignment::default());
    }

    #[test]
    fn roi_align_constant_is_exact() {
        let c = 0.1;
        let grid = FeatureGrid::new(3, 6, 7, vec![c; 126]).unwrap();
        for roi in [
            BBox::new(0.0, 0.0, 7.0, 6.0),
            BBox::new(-2.3, 4.1, 5.7, 9.9),
            BBox::new(3.33, 1.01, 0.4, 0.2),
        ] {
            let spec = RoiSpec::new(roi, 1.0, (3, 4)).with_sampling_points(3);
            let out = roi_align(&grid, &spec).unwrap();
            assert!(out.values().iter().all(|&v| v == c), "{roi:?}");
        }
    }

    #[test]
    fn roi_align_reproduces_x_ramp() {
        // f = x at cell centers, i.e. value col + 0.5 at column col.
        let grid = FeatureGrid::from_fn(1, 8, 8, |_, _, col| col as f64 + 0.5).unwrap();
        let spec = RoiSpec::new(BBox::new(1.0, 1.5, 4.0, 3.0), 1.0, (2, 2));
        let out = roi_align(&grid, &spec).unwrap();
        // Bin centers in x: 1 + 1 = 2 and 1 + 3 = 4.
        for (got, want) in out.values().iter().zip([2.0, 4.0, 2.0, 4.0]) {
            assert!((got - want).abs() < EPS, "{got} vs {want}");
        }
    }

    #[test]
    fn roi_align_is_continuous_in_roi_position() {
        let grid = FeatureGrid::from_fn(1, 10, 10, |_, r, c| ((r * 7 + c * 13) % 11) as f64).unwrap();
        let max_dx = (0..10)
            .flat_map(|r| (0..9).map(move |c| (r, c)))
            .map(|(r, c)| (grid.at(0, r, c + 1) - grid.at(0, r, c)).abs())
            .fold(0.0, f64::max);
        let eps = 1e-3;
        let base = RoiSpec::new(BBox::new(2.2, 3.1, 4.4, 3.3), 1.0, (3, 3));
        let moved = RoiSpec {
            roi: base.roi.translate(eps, 0.0),
            ..base
        };
        let a = roi_align(&grid, &base).unwrap();
        let b = roi_align(&grid, &moved).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= eps * max_dx + 1e-12);
        }
    }

    #[test]
    fn roi_align_errors() {
        let grid = ramp_4x4();
        let outside = RoiSpec::new(BBox::new(-5.0, 0.0, 2.0, 2.0), 1.0, (2, 2));
        assert!(matches!(roi_align(&grid, &outside), Err(Error::RoiOutsideGrid { .. })));
        let flat = RoiSpec::new(BBox::new(1.0, 1.0, 0.0, 2.0), 1.0, (2, 2));
        assert!(matches!(roi_align(&grid, &flat), Err(Error::NonPositiveBox { .. })));
        let no_bins = RoiSpec::new(BBox::new(1.0, 1.0, 1.0, 1.0), 1.0, (0, 2));
        assert!(matches!(roi_align(&grid, &no_bins), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn batch_preserves_order() {
        let grid = ramp_4x4();
        let specs: Vec<_> = (0..6)
            .map(|i| RoiSpec::new(BBox::new(i as f64 * 0.5, 0.0, 1.5, 2.0), 1.0, (1, 1)))
            .collect();
        let batch = roi_align_batch(&grid, &specs);
        for (spec, got) in specs.iter().zip(batch) {
            assert_eq!(got.unwrap(), roi_align(&grid, spec).unwrap());
        }
    }
}
