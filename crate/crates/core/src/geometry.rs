//! Polygon rasterization, binary masks, run-length encoding and overlap measures.
//!
//! Pixel `(i, j)` is column `i`, row `j`; its center sits at `(i + 0.5, j + 0.5)`.
//! Masks are stored row-major.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vertex in pixel coordinates. Serialized as a two-element `[x, y]` array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box: `(x, y)` is the top-left corner, `w`/`h` the extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Builds a box from corner coordinates, `x2 >= x1` and `y2 >= y1`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Finite coordinates and non-negative extent.
    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Dense binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "mask of {width}x{height} needs {expected} bits, got {}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.offset(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let idx = self.offset(x, y);
        self.bits[idx] = value;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// In-place union with a mask of the same dimensions.
    pub fn union_with(&mut self, other: &BitMask) -> Result<()> {
        check_dims(self, other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    fn fill_row_span(&mut self, row: u32, start: u32, end: u32) {
        let base = row as usize * self.width as usize;
        self.bits[base + start as usize..base + end as usize].fill(true);
    }
}

fn check_dims(a: &BitMask, b: &BitMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            left_w: a.width,
            left_h: a.height,
            right_w: b.width,
            right_h: b.height,
        });
    }
    Ok(())
}

/// Run-length encoded mask: alternating runs of 0s and 1s in row-major order,
/// always starting with a (possibly empty) run of 0s.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u64>,
}

impl RleMask {
    /// Checks the run-sum and zero-run invariants.
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.runs.iter().sum();
        let expected = self.width as u64 * self.height as u64;
        if total != expected {
            return Err(Error::InvalidRle(format!(
                "runs sum to {total}, expected {expected} for {}x{}",
                self.width, self.height
            )));
        }
        if let Some(pos) = self.runs.windows(2).position(|w| w[0] == 0 && w[1] == 0) {
            return Err(Error::InvalidRle(format!(
                "consecutive zero-length runs at index {pos}"
            )));
        }
        Ok(())
    }

    /// Number of set pixels, without decoding.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).sum()
    }
}

pub fn rle_encode(mask: &BitMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &bit in &mask.bits {
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    RleMask {
        width: mask.width,
        height: mask.height,
        runs,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BitMask> {
    rle.validate()?;
    let mut bits = Vec::with_capacity(rle.width as usize * rle.height as usize);
    let mut value = false;
    for &run in &rle.runs {
        bits.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    BitMask::from_bits(rle.width, rle.height, bits)
}

/// Absolute shoelace area.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|k| {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice.abs() / 2.0
}

/// Length of the closed boundary.
pub fn polygon_perimeter(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|k| {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            (b.x - a.x).hypot(b.y - a.y)
        })
        .sum()
}

/// x-coordinate where the edge `current -> previous` crosses the horizontal line
/// at `y`, using the half-open rule on the edge's y-extent.
#[inline]
fn edge_crossing(current: Point, previous: Point, y: f64) -> Option<f64> {
    if (current.y > y) != (previous.y > y) {
        Some((previous.x - current.x) * (y - current.y) / (previous.y - current.y) + current.x)
    } else {
        None
    }
}

/// First column whose center is `>= x`.
fn first_center_at_or_after(x: f64, width: u32) -> u32 {
    if x <= 0.5 {
        return 0;
    }
    if x > width as f64 - 0.5 {
        return width;
    }
    let mut i = (x - 0.5).ceil().max(0.0) as u32;
    while i < width && (i as f64 + 0.5) < x {
        i += 1;
    }
    while i > 0 && ((i - 1) as f64 + 0.5) >= x {
        i -= 1;
    }
    i
}

/// Even-odd scanline fill sampling each pixel at its center.
///
/// Vertices may lie outside the grid; the mask is the clipped intersection.
pub fn rasterize_polygon(vertices: &[Point], width: u32, height: u32) -> Result<BitMask> {
    if vertices.len() < 3 {
        return Err(Error::DegeneratePolygon(vertices.len()));
    }
    let mut mask = BitMask::new(width, height);
    if width == 0 || height == 0 {
        return Ok(mask);
    }

    let (min_y, max_y) = vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.y), hi.max(p.y))
    });
    let first_row = first_center_at_or_after(min_y, height);
    let n = vertices.len();
    let mut crossings = Vec::with_capacity(n);

    for row in first_row..height {
        let y = row as f64 + 0.5;
        if y > max_y {
            break;
        }
        crossings.clear();
        for k in 0..n {
            if let Some(x) = edge_crossing(vertices[k], vertices[(k + n - 1) % n], y) {
                crossings.push(x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        // A center c is inside iff an odd number of crossings lie strictly right
        // of it, i.e. xs[2k] <= c < xs[2k + 1].
        for span in crossings.chunks_exact(2) {
            let start = first_center_at_or_after(span[0], width);
            let end = first_center_at_or_after(span[1], width);
            if start < end {
                mask.fill_row_span(row, start, end);
            }
        }
    }
    Ok(mask)
}

/// `|a ∧ b| / |a ∨ b|`; two empty masks score 0.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    check_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Continuous-area IoU; 0 when the union has no area.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Tightest pixel box around the set pixels, `None` for an empty mask.
pub fn mask_to_bbox(mask: &BitMask) -> Option<BBox> {
    let w = mask.width as usize;
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (row, line) in mask.bits.chunks(w.max(1)).enumerate() {
        let Some(first) = line.iter().position(|&b| b) else {
            continue;
        };
        let last = line.iter().rposition(|&b| b).unwrap_or(first);
        bounds = Some(match bounds {
            None => (first, row, last, row),
            Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), row),
        });
    }
    bounds.map(|(x0, y0, x1, y1)| BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64))
}

/// Writes a binary PGM (P5, maxval 255, set pixels = 255).
pub fn write_pgm<W: Write>(mask: &BitMask, mut sink: W) -> Result<()> {
    write!(sink, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(())
}

/// Reads a binary PGM; any non-zero sample is a set pixel.
pub fn read_pgm<R: BufRead>(mut source: R) -> Result<BitMask> {
    let bad = |msg: &str| Error::SchemaViolation {
        location: "pgm header".to_string(),
        message: msg.to_string(),
    };
    let mut header = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    // P5 header: magic, width, height, maxval separated by whitespace; '#' starts a comment.
    while fields.len() < 4 {
        header.clear();
        if source.read_until(b'\n', &mut header)? == 0 {
            return Err(bad("truncated header"));
        }
        let line = String::from_utf8_lossy(&header);
        let line = line.split('#').next().unwrap_or("");
        fields.extend(line.split_whitespace().map(str::to_string));
    }
    if fields[0] != "P5" || fields.len() != 4 {
        return Err(bad("expected `P5 <width> <height> <maxval>`"));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    let mut data = vec![0u8; width as usize * height as usize];
    source.read_exact(&mut data)?;
    BitMask::from_bits(width, height, data.into_iter().map(|v| v != 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[(f64, f64)]) -> Vec<Point> {
        raw.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    /// Brute-force point-in-polygon over every pixel center.
    fn oracle_count(vertices: &[Point], width: u32, height: u32) -> usize {
        let n = vertices.len();
        let mut count = 0;
        for j in 0..height {
            for i in 0..width {
                let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
                let mut inside = false;
                let mut prev = n - 1;
                for cur in 0..n {
                    let (a, b) = (vertices[cur], vertices[prev]);
                    if (a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x {
                        inside = !inside;
                    }
                    prev = cur;
                }
                count += inside as usize;
            }
        }
        count
    }

    #[test]
    fn rectangle_sets_twelve_pixels() {
        let rect = pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)]);
        assert_eq!(oracle_count(&rect, 10, 10), 12);
        let mask = rasterize_polygon(&rect, 10, 10).unwrap();
        assert_eq!(mask.count(), 12);
        assert!(mask.get(3, 2));
        assert!(!mask.get(4, 0));
    }

    #[test]
    fn triangle_matches_enumeration() {
        let tri = pts(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)]);
        // Centers (i+.5, j+.5) with i + j + 1 < 4: 3 + 2 + 1 = 6.
        let expected = oracle_count(&tri, 10, 10);
        assert_eq!(expected, 6);
        assert_eq!(rasterize_polygon(&tri, 10, 10).unwrap().count(), expected);
    }

    #[test]
    fn polygon_outside_grid_is_empty() {
        let far = pts(&[(20.0, 20.0), (30.0, 20.0), (30.0, 30.0)]);
        assert!(rasterize_polygon(&far, 10, 10).unwrap().is_empty());
        let left = pts(&[(-9.0, 0.0), (-1.0, 0.0), (-1.0, 10.0), (-9.0, 10.0)]);
        assert!(rasterize_polygon(&left, 10, 10).unwrap().is_empty());
    }

    #[test]
    fn clipped_polygon_covers_grid() {
        let big = pts(&[(-5.0, -5.0), (50.0, -5.0), (50.0, 50.0), (-5.0, 50.0)]);
        assert_eq!(rasterize_polygon(&big, 10, 10).unwrap().count(), 100);
    }

    #[test]
    fn two_vertices_rejected() {
        let line = pts(&[(0.0, 0.0), (4.0, 4.0)]);
        assert!(matches!(
            rasterize_polygon(&line, 10, 10),
            Err(Error::DegeneratePolygon(2))
        ));
    }

    #[test]
    fn shoelace_areas() {
        assert_eq!(
            polygon_area(&pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])),
            1.0
        );
        assert_eq!(
            polygon_area(&pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)])),
            12.0
        );
        assert_eq!(polygon_area(&pts(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)])), 8.0);
        // Clockwise order gives the same magnitude.
        assert_eq!(polygon_area(&pts(&[(0.0, 0.0), (0.0, 4.0), (4.0, 0.0)])), 8.0);
    }

    fn block(w: u32, h: u32, x0: u32, y0: u32, bw: u32, bh: u32) -> BitMask {
        let mut m = BitMask::new(w, h);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn mask_iou_cases() {
        let a = block(8, 8, 0, 0, 4, 2);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let far = block(8, 8, 0, 5, 4, 2);
        assert_eq!(mask_iou(&a, &far).unwrap(), 0.0);
        // 2x4 blocks sharing a 2x2 square: 4 / (8 + 8 - 4).
        let b = block(8, 8, 2, 0, 4, 2);
        assert_eq!(mask_iou(&a, &b).unwrap(), 4.0 / 12.0);
        assert_eq!(mask_iou(&b, &a).unwrap(), 1.0 / 3.0);
        let empty = BitMask::new(8, 8);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(matches!(
            mask_iou(&a, &BitMask::new(4, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn box_iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)), 0.0);
        let zero = BBox::new(3.0, 3.0, 0.0, 0.0);
        assert_eq!(box_iou(&zero, &zero), 0.0);
    }

    #[test]
    fn box_iou_agrees_with_fine_raster() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 2.0, 2.0);
        // Sample a 0.01 lattice over [0, 3)^2 and count cell centers in each box.
        let step = 0.01;
        let n = 300;
        let (mut inter, mut union) = (0u64, 0u64);
        let inside = |bx: &BBox, x: f64, y: f64| x >= bx.x && x < bx.right() && y >= bx.y && y < bx.bottom();
        for j in 0..n {
            for i in 0..n {
                let (x, y) = ((i as f64 + 0.5) * step, (j as f64 + 0.5) * step);
                let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        let sampled = inter as f64 / union as f64;
        assert!((sampled - 1.0 / 7.0).abs() < 1e-3);
        assert!((box_iou(&a, &b) - sampled).abs() < 1e-3);
        assert!((box_iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn mask_bbox_cases() {
        let mut m = BitMask::new(10, 10);
        assert_eq!(mask_to_bbox(&m), None);
        m.set(3, 5, true);
        assert_eq!(mask_to_bbox(&m), Some(BBox::new(3.0, 5.0, 1.0, 1.0)));

        let mut two = BitMask::new(10, 10);
        two.set(1, 1, true);
        two.set(4, 2, true);
        assert_eq!(mask_to_bbox(&two), Some(BBox::new(1.0, 1.0, 4.0, 2.0)));

        let full = BitMask::from_bits(10, 10, vec![true; 100]).unwrap();
        assert_eq!(mask_to_bbox(&full), Some(BBox::new(0.0, 0.0, 10.0, 10.0)));
    }

    #[test]
    fn rle_known_encodings() {
        let zeros = BitMask::new(4, 4);
        assert_eq!(rle_encode(&zeros).runs, vec![16]);
        let ones = BitMask::from_bits(4, 4, vec![true; 16]).unwrap();
        assert_eq!(rle_encode(&ones).runs, vec![0, 16]);
        let checker = BitMask::from_bits(4, 1, vec![false, true, false, true]).unwrap();
        assert_eq!(rle_encode(&checker).runs, vec![1, 1, 1, 1]);
        assert_eq!(rle_decode(&rle_encode(&checker)).unwrap(), checker);
        assert_eq!(rle_encode(&checker).area(), 2);
    }

    #[test]
    fn rle_rejects_bad_runs() {
        let short = RleMask {
            width: 4,
            height: 4,
            runs: vec![3, 4],
        };
        assert!(matches!(rle_decode(&short), Err(Error::InvalidRle(_))));
        let zeros = RleMask {
            width: 2,
            height: 1,
            runs: vec![1, 0, 0, 1],
        };
        assert!(matches!(rle_decode(&zeros), Err(Error::InvalidRle(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let tri = pts(&[(0.0, 0.0), (7.0, 1.0), (2.0, 6.0)]);
        let mask = rasterize_polygon(&tri, 9, 7).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mask, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n9 7\n255\n"));
        assert_eq!(read_pgm(&buf[..]).unwrap(), mask);
    }
}
