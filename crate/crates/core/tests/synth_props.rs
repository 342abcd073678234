use drivable_core::dataset::write_normalized;
use drivable_core::metrics::{evaluate, write_predictions, MatchConfig};
use drivable_core::synth::{generate_suite, SynthParams};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

fn mean_map(make: impl Fn(u64) -> SynthParams) -> f64 {
    let cfg = MatchConfig::default();
    let total: f64 = SEEDS
        .map(|seed| {
            let suite = generate_suite(&make(seed)).unwrap();
            evaluate(&suite.index, &suite.detections, &cfg).unwrap().map
        })
        .sum();
    total / SEEDS.count() as f64
}

fn base(seed: u64) -> SynthParams {
    SynthParams {
        seed,
        n_images: 30,
        ..SynthParams::default()
    }
}

#[test]
fn map_does_not_rise_with_drop_rate() {
    let curve: Vec<f64> = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        .iter()
        .map(|&drop_rate| {
            mean_map(|seed| SynthParams {
                drop_rate,
                ..base(seed)
            })
        })
        .collect();
    assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
    assert_eq!(*curve.last().unwrap(), 0.0);
}

#[test]
fn map_does_not_rise_with_jitter() {
    let curve: Vec<f64> = [0.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&jitter| mean_map(|seed| SynthParams { jitter, ..base(seed) }))
        .collect();
    assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
}

#[test]
fn regenerated_suites_are_bit_identical() {
    let render = |p: &SynthParams| {
        let suite = generate_suite(p).unwrap();
        let (mut labels, mut preds) = (Vec::new(), Vec::new());
        write_normalized(&suite.index, &mut labels).unwrap();
        write_predictions(&suite.detections, &mut preds).unwrap();
        (labels, preds)
    };
    let p = base(11);
    assert_eq!(render(&p), render(&p));
    assert_ne!(render(&p), render(&base(12)));
}

#[test]
fn predictions_depend_on_image_not_position() {
    // Growing the suite leaves the predictions of existing frames untouched.
    let small = generate_suite(&SynthParams { n_images: 5, ..base(4) }).unwrap();
    let large = generate_suite(&SynthParams { n_images: 9, ..base(4) }).unwrap();
    for d in &small.detections {
        assert!(large.detections.contains(d));
    }
}
