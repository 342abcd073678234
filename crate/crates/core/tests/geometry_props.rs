use drivable_core::geometry::{
    box_iou, mask_iou, mask_to_bbox, polygon_area, polygon_perimeter, rasterize_polygon, read_pgm, rle_decode,
    rle_encode, write_pgm, BBox, BitMask, Point, RleMask,
};
use proptest::prelude::*;

/// Even-odd crossing test at every pixel center.
fn pnpoly_mask(vertices: &[Point], width: u32, height: u32) -> Vec<bool> {
    let n = vertices.len();
    let mut out = Vec::with_capacity((width * height) as usize);
    for row in 0..height {
        for col in 0..width {
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut inside = false;
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (vertices[i], vertices[j]);
                if (a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x {
                    inside = !inside;
                }
                j = i;
            }
            out.push(inside);
        }
    }
    out
}

fn arbitrary_polygon(max_vertices: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((lo..hi, lo..hi).prop_map(|(x, y)| Point::new(x, y)), 3..=max_vertices)
}

/// Simple (star-shaped) polygon: vertices at sorted distinct angles around a center.
fn star_polygon(extent: f64) -> impl Strategy<Value = Vec<Point>> {
    let margin = extent * 0.2;
    (
        margin..extent - margin,
        margin..extent - margin,
        prop::collection::vec((0.0..1.0f64, 0.1..1.0f64), 3..16),
    )
        .prop_map(move |(cx, cy, spokes)| {
            let n = spokes.len() as f64;
            spokes
                .iter()
                .enumerate()
                .map(|(k, (jitter, r))| {
                    // One vertex per angular sector keeps the angles strictly increasing.
                    let theta = (k as f64 + 0.1 + 0.8 * jitter) / n * std::f64::consts::TAU;
                    let radius = r * margin;
                    Point::new(cx + radius * theta.cos(), cy + radius * theta.sin())
                })
                .collect()
        })
}

fn random_mask(max_side: u32) -> impl Strategy<Value = BitMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), (w * h) as usize)
            .prop_map(move |bits| BitMask::from_bits(w, h, bits).unwrap())
    })
}

fn int_box() -> impl Strategy<Value = BBox> {
    (-50i32..50, -50i32..50, 0i32..40, 0i32..40)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scanline_equals_point_in_polygon(poly in arbitrary_polygon(12, -8.0, 72.0)) {
        let mask = rasterize_polygon(&poly, 64, 64).unwrap();
        prop_assert_eq!(mask.bits(), &pnpoly_mask(&poly, 64, 64)[..]);
    }

    #[test]
    fn scanline_equals_point_in_polygon_on_integer_vertices(
        raw in prop::collection::vec((0i32..=16, 0i32..=16), 3..10),
    ) {
        // Integer vertices put edges and vertices exactly on row boundaries.
        let poly: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x as f64 * 4.0, y as f64 * 4.0)).collect();
        let mask = rasterize_polygon(&poly, 64, 64).unwrap();
        prop_assert_eq!(mask.bits(), &pnpoly_mask(&poly, 64, 64)[..]);
    }

    #[test]
    fn rle_round_trip(mask in random_mask(40)) {
        let rle = rle_encode(&mask);
        rle.validate().unwrap();
        prop_assert_eq!(rle.area() as usize, mask.count());
        prop_assert_eq!(rle_decode(&rle).unwrap(), mask);
    }

    #[test]
    fn canonical_runs_round_trip(
        width in 1u32..30,
        runs in prop::collection::vec(1u64..20, 0..12),
        leading_zero in any::<bool>(),
    ) {
        let mut runs = runs;
        if leading_zero {
            runs.insert(0, 0);
        }
        // Stretch the final run so the pixels fill whole rows.
        let total: u64 = runs.iter().sum();
        let pad = (width as u64 - total % width as u64) % width as u64;
        match runs.last_mut() {
            Some(last) if *last > 0 => *last += pad,
            _ => runs.push(width as u64),
        }
        let total: u64 = runs.iter().sum();
        let rle = RleMask { width, height: (total / width as u64) as u32, runs };
        let decoded = rle_decode(&rle).unwrap();
        prop_assert_eq!(rle_encode(&decoded), rle);
    }

    #[test]
    fn pgm_round_trip(mask in random_mask(24)) {
        let mut buf = Vec::new();
        write_pgm(&mask, &mut buf).unwrap();
        prop_assert_eq!(read_pgm(&buf[..]).unwrap(), mask);
    }

    #[test]
    fn box_iou_laws(a in int_box(), b in int_box(), dx in -20i32..20, dy in -20i32..20) {
        let ab = box_iou(&a, &b);
        prop_assert_eq!(ab, box_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        let (dx, dy) = (dx as f64, dy as f64);
        prop_assert_eq!(ab, box_iou(&a.translate(dx, dy), &b.translate(dx, dy)));
        if a.area() > 0.0 {
            prop_assert_eq!(box_iou(&a, &a), 1.0);
        }
    }

    #[test]
    fn mask_iou_laws(a in random_mask(16), seed in any::<u64>(), dx in 0u32..8, dy in 0u32..8) {
        let b_bits: Vec<bool> = (0..a.bits().len())
            .map(|k| (seed.rotate_left(k as u32 % 64) ^ k as u64) & 1 == 1)
            .collect();
        let b = BitMask::from_bits(a.width(), a.height(), b_bits).unwrap();
        let ab = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));

        let shift = |m: &BitMask| {
            let mut out = BitMask::new(m.width() + 8, m.height() + 8);
            for y in 0..m.height() {
                for x in 0..m.width() {
                    out.set(x + dx, y + dy, m.get(x, y));
                }
            }
            out
        };
        prop_assert_eq!(ab, mask_iou(&shift(&a), &shift(&b)).unwrap());
    }

    #[test]
    fn mask_bbox_contains_every_pixel(mask in random_mask(20)) {
        match mask_to_bbox(&mask) {
            None => prop_assert!(mask.is_empty()),
            Some(b) => {
                for y in 0..mask.height() {
                    for x in 0..mask.width() {
                        if mask.get(x, y) {
                            prop_assert!(x as f64 >= b.x && (x as f64) < b.right());
                            prop_assert!(y as f64 >= b.y && (y as f64) < b.bottom());
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pixel_count_tracks_shoelace_area(poly in star_polygon(256.0)) {
        let count = rasterize_polygon(&poly, 256, 256).unwrap().count() as f64;
        let area = polygon_area(&poly);
        let bound = polygon_perimeter(&poly) + poly.len() as f64;
        prop_assert!((count - area).abs() <= bound, "count {count}, area {area}, bound {bound}");
    }
}

#[test]
fn doubling_a_polygon_quadruples_its_pixels() {
    let poly = [
        Point::new(10.3, 200.7),
        Point::new(180.2, 210.1),
        Point::new(120.9, 40.4),
        Point::new(60.5, 30.8),
    ];
    let doubled: Vec<Point> = poly.iter().map(|p| Point::new(p.x * 2.0, p.y * 2.0)).collect();
    let small = rasterize_polygon(&poly, 256, 256).unwrap().count() as f64;
    let large = rasterize_polygon(&doubled, 512, 512).unwrap().count() as f64;
    assert!((large / small - 4.0).abs() < 0.01, "ratio {}", large / small);
}
