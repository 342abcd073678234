//! Synthetic road scenes with known ground truth, controllably corrupted
//! predictions, and a slow brute-force mAP reference.
//!
//! # Random streams
//!
//! Every scene and every prediction set draws from its own
//! xoshiro256++ generator (Blackman & Vigna), seeded through
//! `seed_from_u64`, which expands the 64-bit seed with SplitMix64. Stream seeds
//! are derived as
//!
//! ```text
//! scene(i)        = mix(seed ^ mix(i ^ 0x5343454E45000000))        // "SCENE"
//! predictions(id) = mix(seed ^ mix(fnv1a64(id) ^ 0x5052454400000000)) // "PRED"
//! mix(z): z += 0x9E3779B97F4A7C15;
//!         z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!         z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//!         z ^ (z >> 31)
//! ```
//!
//! with FNV-1a over the UTF-8 bytes of the image id (offset basis
//! `0xcbf29ce484222325`, prime `0x100000001b3`).

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionKey, DatasetIndex, ImageRecord, LaneClass, PolygonLabel, Scene, TimeOfDay, Weather};
use crate::error::{Error, Result};
use crate::geometry::{rasterize_polygon, rle_encode, Point};
use crate::metrics::{Detection, Geometry, IouKind, MatchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_images: usize,
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
    /// Inclusive `(min, max)` lane count per image, direct lane included.
    pub lanes_per_image: (usize, usize),
    /// Standard deviation of per-vertex noise, in pixels.
    pub jitter: f64,
    /// Probability that a ground-truth lane gets no prediction.
    pub drop_rate: f64,
    /// Expected number of spurious detections per image.
    pub fp_rate: f64,
    /// Standard deviation of the score perturbation.
    pub score_noise: f64,
}

impl Default for SynthParams {
    /// Moderate corruption on 320x180 frames.
    fn default() -> Self {
        Self {
            seed: 1,
            n_images: 200,
            image_size: (320, 180),
            lanes_per_image: (1, 3),
            jitter: 3.0,
            drop_rate: 0.2,
            fp_rate: 0.5,
            score_noise: 0.2,
        }
    }
}

impl SynthParams {
    /// Ground-truth-identical predictions with unit scores.
    pub fn perfect(seed: u64, n_images: usize) -> Self {
        Self {
            seed,
            n_images,
            jitter: 0.0,
            drop_rate: 0.0,
            fp_rate: 0.0,
            score_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad(format!("image size {:?} must be positive", self.image_size));
        }
        let (lo, hi) = self.lanes_per_image;
        if lo == 0 || lo > hi {
            return bad(format!(
                "lane range {lo}..={hi} must be non-empty and start at 1 or more"
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return bad(format!("drop rate {} is not a probability", self.drop_rate));
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("fp rate", self.fp_rate),
            ("score noise", self.score_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

const SCENE_DOMAIN: u64 = 0x5343_454E_4500_0000;
const PRED_DOMAIN: u64 = 0x5052_4544_0000_0000;

fn scene_rng(seed: u64, i: usize) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix(seed ^ mix(i as u64 ^ SCENE_DOMAIN)))
}

fn prediction_rng(seed: u64, image_id: &str) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix(seed ^ mix(fnv1a64(image_id.as_bytes()) ^ PRED_DOMAIN)))
}

pub fn scene_id(i: usize) -> String {
    format!("synth-{i:06}")
}

/// Round-robin condition assignment over the defined tags of each axis.
pub fn scene_conditions(i: usize) -> ConditionKey {
    let pick = |n: usize| i % (n - 1);
    ConditionKey {
        weather: Weather::ALL[pick(Weather::ALL.len())],
        scene: Scene::ALL[pick(Scene::ALL.len())],
        timeofday: TimeOfDay::ALL[pick(TimeOfDay::ALL.len())],
    }
}

/// One front-view frame: a direct-lane trapezoid rising from the bottom edge
/// towards a horizon, flanked by adjacent alternative lanes.
pub fn generate_scene(params: &SynthParams, i: usize) -> ImageRecord {
    let mut rng = scene_rng(params.seed, i);
    let (w, h) = (params.image_size.0 as f64, params.image_size.1 as f64);
    let (lo, hi) = params.lanes_per_image;
    let lanes = rng.random_range(lo..=hi.max(lo));
    let n_left = (lanes - 1) / 2;
    let n_right = lanes - 1 - n_left;
    let widest_side = n_left.max(n_right) as f64;

    // Bottom width chosen so every lane fits inside the frame.
    let bottom_w = w * rng.random_range(0.80..0.95) / (2.0 * widest_side + 1.0);
    let slack = (w - bottom_w * (2.0 * widest_side + 1.0)) / 2.0;
    let bottom_c = w / 2.0 + rng.random_range(-1.0..1.0) * slack;
    let top_w = bottom_w * rng.random_range(0.15..0.30);
    let top_c = w * rng.random_range(0.45..0.55);
    let horizon = h * rng.random_range(0.45..0.60);

    let clamp = |x: f64, y: f64| Point::new(x.clamp(0.0, w), y.clamp(0.0, h));
    let lane = |offset: f64| {
        let b0 = bottom_c + (offset - 0.5) * bottom_w;
        let t0 = top_c + (offset - 0.5) * top_w;
        vec![
            clamp(b0, h),
            clamp(b0 + bottom_w, h),
            clamp(t0 + top_w, horizon),
            clamp(t0, horizon),
        ]
    };

    let mut labels = vec![PolygonLabel::new(LaneClass::Direct, lane(0.0))];
    for m in 1..=n_right {
        labels.push(PolygonLabel::new(LaneClass::Alternative, lane(m as f64)));
    }
    for m in 1..=n_left {
        labels.push(PolygonLabel::new(LaneClass::Alternative, lane(-(m as f64))));
    }

    ImageRecord {
        image_id: scene_id(i),
        width: params.image_size.0,
        height: params.image_size.1,
        conditions: scene_conditions(i),
        labels,
    }
}

pub fn generate_index(params: &SynthParams) -> Result<DatasetIndex> {
    params.validate()?;
    let records = (0..params.n_images).map(|i| generate_scene(params, i)).collect();
    DatasetIndex::new(records, crate::dataset::Split::Other)
}

fn mask_detection(record: &ImageRecord, class_id: LaneClass, score: f64, vertices: &[Point]) -> Detection {
    let mask = rasterize_polygon(vertices, record.width, record.height)
        .expect("synthetic polygons have at least three vertices");
    Detection {
        image_id: record.image_id.clone(),
        class_id,
        score,
        geometry: Geometry::Mask(rle_encode(&mask)),
    }
}

/// Predictions for one frame: each lane survives with probability
/// `1 - drop_rate` as a vertex-jittered mask scored `1 - |noise|`, followed by
/// `Poisson(fp_rate)` spurious boxes in the sky region above every lane.
///
/// All per-lane random draws happen whether or not the lane is dropped, so
/// raising `drop_rate` or `jitter` under a fixed seed only removes or
/// perturbs predictions further.
pub fn corrupt_predictions(record: &ImageRecord, params: &SynthParams) -> Vec<Detection> {
    let mut rng = prediction_rng(params.seed, &record.image_id);
    let mut dets = Vec::with_capacity(record.labels.len());
    for label in &record.labels {
        let keep_draw: f64 = rng.random();
        let noise: Vec<(f64, f64)> = label
            .vertices
            .iter()
            .map(|_| {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                (dx, dy)
            })
            .collect();
        let z: f64 = StandardNormal.sample(&mut rng);
        if keep_draw < params.drop_rate {
            continue;
        }
        let jittered: Vec<Point> = label
            .vertices
            .iter()
            .zip(&noise)
            .map(|(p, (dx, dy))| Point::new(p.x + dx * params.jitter, p.y + dy * params.jitter))
            .collect();
        let score = (1.0 - (z * params.score_noise).abs()).clamp(0.0, 1.0);
        dets.push(mask_detection(record, label.class_id, score, &jittered));
    }

    if params.fp_rate > 0.0 {
        let count = Poisson::new(params.fp_rate)
            .map(|p| p.sample(&mut rng) as usize)
            .unwrap_or(0);
        let (w, h) = (record.width as f64, record.height as f64);
        for _ in 0..count {
            let class_id = if rng.random_bool(0.5) {
                LaneClass::Direct
            } else {
                LaneClass::Alternative
            };
            let bw = w * rng.random_range(0.05..0.20);
            let bh = h * rng.random_range(0.03..0.10);
            let x = rng.random_range(0.0..(w - bw).max(f64::MIN_POSITIVE));
            let y = rng.random_range(0.0..0.3) * h;
            let score: f64 = rng.random();
            let rect = [
                Point::new(x, y),
                Point::new(x + bw, y),
                Point::new(x + bw, y + bh),
                Point::new(x, y + bh),
            ];
            dets.push(mask_detection(record, class_id, score, &rect));
        }
    }
    dets
}

/// A generated suite: annotations plus the matching corrupted predictions.
pub struct Suite {
    pub index: DatasetIndex,
    pub detections: Vec<Detection>,
}

pub fn generate_suite(params: &SynthParams) -> Result<Suite> {
    let index = generate_index(params)?;
    let detections = index
        .records()
        .iter()
        .flat_map(|r| corrupt_predictions(r, params))
        .collect();
    Ok(Suite { index, detections })
}

// --- brute-force reference --------------------------------------------------

/// Pixel centers inside the polygon by the even-odd crossing test.
fn brute_force_pixels(vertices: &[Point], width: u32, height: u32) -> Vec<bool> {
    let mut inside = vec![false; width as usize * height as usize];
    let n = vertices.len();
    for row in 0..height {
        let py = row as f64 + 0.5;
        for col in 0..width {
            let px = col as f64 + 0.5;
            let mut odd = false;
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (vertices[i], vertices[j]);
                if (a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x {
                    odd = !odd;
                }
                j = i;
            }
            inside[row as usize * width as usize + col as usize] = odd;
        }
    }
    inside
}

fn expand_runs(runs: &[u64], len: usize) -> Option<Vec<bool>> {
    let mut out = Vec::with_capacity(len);
    for (k, &run) in runs.iter().enumerate() {
        for _ in 0..run {
            out.push(k % 2 == 1);
        }
    }
    (out.len() == len).then_some(out)
}

/// Inclusive pixel extents `(min_col, min_row, max_col, max_row)`.
fn pixel_extent(pixels: &[bool], width: u32) -> Option<(f64, f64, f64, f64)> {
    let mut ext: Option<(usize, usize, usize, usize)> = None;
    for (k, _) in pixels.iter().enumerate().filter(|(_, &p)| p) {
        let (c, r) = (k % width as usize, k / width as usize);
        ext = Some(match ext {
            None => (c, r, c, r),
            Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
        });
    }
    ext.map(|(c0, r0, c1, r1)| (c0 as f64, r0 as f64, c1 as f64 + 1.0, r1 as f64 + 1.0))
}

enum OracleShape {
    Corners(Option<(f64, f64, f64, f64)>),
    Pixels(Vec<bool>),
}

fn oracle_iou(a: &OracleShape, b: &OracleShape) -> f64 {
    match (a, b) {
        (OracleShape::Corners(Some((ax0, ay0, ax1, ay1))), OracleShape::Corners(Some((bx0, by0, bx1, by1)))) => {
            let iw = (ax1.min(*bx1) - ax0.max(*bx0)).max(0.0);
            let ih = (ay1.min(*by1) - ay0.max(*by0)).max(0.0);
            let inter = iw * ih;
            let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
            if union > 0.0 {
                inter / union
            } else {
                0.0
            }
        }
        (OracleShape::Pixels(p), OracleShape::Pixels(q)) => {
            let inter = p.iter().zip(q).filter(|(x, y)| **x && **y).count();
            let union = p.iter().zip(q).filter(|(x, y)| **x || **y).count();
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        }
        _ => 0.0,
    }
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Slow reference mAP over the whole index.
///
/// Shares only the domain types with `metrics`: ground truth is found by
/// testing every pixel center against every polygon edge, masks are expanded
/// run by run, matching uses a full IoU table, and AP is integrated in exact
/// rational arithmetic by visiting each recall breakpoint and taking the best
/// precision at or beyond it.
pub fn oracle_map(index: &DatasetIndex, dets: &[Detection], cfg: &MatchConfig) -> Result<f64> {
    cfg.validate()?;
    // (class, score, global index, tp)
    let mut outcomes: Vec<(LaneClass, f64, usize, bool)> = Vec::new();
    let mut n_gt = [0usize; 2];
    let class_slot = |c: LaneClass| if c == LaneClass::Direct { 0 } else { 1 };

    for record in index.records() {
        let len = record.width as usize * record.height as usize;
        let gts: Vec<(LaneClass, OracleShape)> = record
            .labels
            .iter()
            .map(|l| {
                let px = brute_force_pixels(&l.vertices, record.width, record.height);
                let shape = match cfg.iou_kind {
                    IouKind::Box => OracleShape::Corners(pixel_extent(&px, record.width)),
                    IouKind::Mask => OracleShape::Pixels(px),
                };
                (l.class_id, shape)
            })
            .collect();
        for (c, _) in &gts {
            n_gt[class_slot(*c)] += 1;
        }

        let mut mine: Vec<(usize, &Detection)> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.image_id == record.image_id)
            .collect();
        let mut shapes = Vec::with_capacity(mine.len());
        for (_, d) in &mine {
            let shape = match (&d.geometry, cfg.iou_kind) {
                (Geometry::Box(b), IouKind::Box) => OracleShape::Corners(Some((b.x, b.y, b.x + b.w, b.y + b.h))),
                (Geometry::Mask(r), kind) => {
                    if (r.width, r.height) != (record.width, record.height) {
                        return Err(Error::GeometryMismatch {
                            image_id: d.image_id.clone(),
                            message: "mask size differs from the image".to_string(),
                        });
                    }
                    let px = expand_runs(&r.runs, len).ok_or_else(|| Error::InvalidRle("run total".to_string()))?;
                    match kind {
                        IouKind::Box => OracleShape::Corners(pixel_extent(&px, record.width)),
                        IouKind::Mask => OracleShape::Pixels(px),
                    }
                }
                (Geometry::Box(_), IouKind::Mask) => {
                    return Err(Error::GeometryMismatch {
                        image_id: d.image_id.clone(),
                        message: "box under mask matching".to_string(),
                    })
                }
            };
            shapes.push(shape);
        }

        let table: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| gts.iter().map(|(_, g)| oracle_iou(s, g)).collect())
            .collect();

        let mut order: Vec<usize> = (0..mine.len()).collect();
        order.sort_by(|&a, &b| {
            mine[b]
                .1
                .score
                .partial_cmp(&mine[a].1.score)
                .unwrap_or(Ordering::Equal)
                .then(mine[a].0.cmp(&mine[b].0))
        });
        let mut taken = vec![false; gts.len()];
        for d in order {
            let (global, det) = mine[d];
            let mut best_g = None;
            let mut best_iou = -1.0;
            for g in 0..gts.len() {
                if !taken[g] && gts[g].0 == det.class_id && table[d][g] > best_iou {
                    best_iou = table[d][g];
                    best_g = Some(g);
                }
            }
            let tp = match best_g {
                Some(g) if best_iou >= cfg.iou_threshold => {
                    taken[g] = true;
                    true
                }
                _ => false,
            };
            outcomes.push((det.class_id, det.score, global, tp));
        }
        mine.clear();
    }

    let mut aps: Vec<BigRational> = Vec::new();
    for class in LaneClass::ALL {
        let total = n_gt[class_slot(class)];
        if total == 0 {
            continue;
        }
        let mut list: Vec<(f64, usize, bool)> = outcomes
            .iter()
            .filter(|o| o.0 == class)
            .map(|o| (o.1, o.2, o.3))
            .collect();
        list.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

        // (tp so far, rank) after each detection.
        let mut steps = Vec::with_capacity(list.len());
        let mut tp = 0;
        for (k, item) in list.iter().enumerate() {
            tp += item.2 as usize;
            steps.push((tp, k + 1));
        }
        let mut ap = BigRational::zero();
        for level in 1..=tp {
            let best = steps
                .iter()
                .filter(|(t, _)| *t >= level)
                .map(|&(t, k)| ratio(t, k))
                .max()
                .unwrap_or_else(BigRational::zero);
            ap += best * ratio(1, total);
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let n = aps.len();
    let mean = aps.into_iter().fold(BigRational::zero(), |acc, x| acc + x) / ratio(n, 1);
    Ok(mean.to_f64().unwrap_or(f64::NAN))
}
