use crcnn_core::eval::{
    aggregate, binarize, confusion, evaluate_predictions, label, mean_metrics, BinaryMask,
    ConfusionReport, GroundTruthMask, LabelMode, Metrics, ProbabilityMask, VideoResult,
};
use crcnn_core::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CD_LABELS: [u8; 5] = [0, 50, 85, 170, 255];

fn random_gt(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GroundTruthMask {
    let labels = (0..w * h)
        .map(|_| CD_LABELS[rng.random_range(0..5)])
        .collect();
    GroundTruthMask::new(w, h, labels, LabelMode::Cd2014).unwrap()
}

fn random_pred(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    BinaryMask::new(w, h, (0..w * h).map(|_| rng.random_bool(0.5)).collect()).unwrap()
}

/// Plain ratios from the four counts.
fn scalar_metrics(tp: f64, tn: f64, fp: f64, fn_: f64) -> (f64, f64, f64, f64) {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if precision + recall > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    (
        precision,
        recall,
        f,
        100.0 * (fn_ + fp) / (tp + fp + fn_ + tn),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn worked_example() {
    let m = ConfusionReport::new(9, 89, 1, 1).metrics().unwrap();
    assert_eq!(m.precision, 0.9);
    assert_eq!(m.recall, 0.9);
    assert_eq!(m.f_measure, 0.9);
    assert_eq!(m.pwc, 2.0);
}

#[test]
fn random_tables_match_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let r = ConfusionReport::new(
            rng.random_range(0..1000),
            rng.random_range(0..100_000),
            rng.random_range(0..1000),
            rng.random_range(0..1000),
        );
        let Some(m) = r.metrics() else { continue };
        let (p, rc, f, pwc) = scalar_metrics(r.tp as f64, r.tn as f64, r.fp as f64, r.fn_ as f64);
        assert!(
            close(m.precision, p)
                && close(m.recall, rc)
                && close(m.f_measure, f)
                && close(m.pwc, pwc),
            "{r:?}"
        );
    }
}

#[test]
fn division_conventions() {
    let m = ConfusionReport::new(0, 10, 0, 4).metrics().unwrap();
    assert_eq!((m.precision, m.recall, m.f_measure), (0.0, 0.0, 0.0));
    let m = ConfusionReport::new(0, 10, 3, 0).metrics().unwrap();
    assert_eq!((m.precision, m.recall, m.f_measure), (0.0, 0.0, 0.0));
    assert!(ConfusionReport::new(0, 0, 0, 0).metrics().is_none());
}

#[test]
fn thresholded_ground_truth_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels: Vec<u8> = (0..64)
        .map(|_| if rng.random_bool(0.3) { 255 } else { 0 })
        .collect();
    let gt = GroundTruthMask::new(8, 8, labels.clone(), LabelMode::Binary).unwrap();
    let probs = Tensor4::from_vec(
        Shape4::new(1, 1, 8, 8),
        labels.iter().map(|&v| v as f32 / 255.0).collect(),
    )
    .unwrap();
    let pred = binarize(&ProbabilityMask::new(probs).unwrap(), 0.8).unwrap();
    let m = confusion(&pred, &gt).unwrap().metrics().unwrap();
    assert_eq!(
        (m.precision, m.recall, m.f_measure, m.pwc),
        (1.0, 1.0, 1.0, 0.0)
    );
}

#[test]
fn all_outside_roi_is_undefined() {
    let gt = GroundTruthMask::new(3, 3, vec![label::OUTSIDE_ROI; 9], LabelMode::Cd2014).unwrap();
    let pred = BinaryMask::new(3, 3, vec![true; 9]).unwrap();
    let r = confusion(&pred, &gt).unwrap();
    assert_eq!(r.total(), 0);
    assert!(r.metrics().is_none());
}

#[test]
fn confusion_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let gt = random_gt(&mut rng, 16, 16);
        let pred = random_pred(&mut rng, 16, 16);
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for y in 0..16 {
            for x in 0..16 {
                let g = gt.labels()[y * 16 + x];
                let p = pred.bits()[y * 16 + x];
                if g == 255 && p {
                    tp += 1;
                } else if g == 255 {
                    fn_ += 1;
                } else if (g == 0 || g == 50) && p {
                    fp += 1;
                } else if g == 0 || g == 50 {
                    tn += 1;
                }
            }
        }
        let r = confusion(&pred, &gt).unwrap();
        assert_eq!(r, ConfusionReport::new(tp, tn, fp, fn_));
        let scored = gt.labels().iter().filter(|&&v| v != 85 && v != 170).count() as u64;
        assert_eq!(r.total(), scored);
    }
}

#[test]
fn mismatched_dims_and_labels() {
    let gt = GroundTruthMask::new(2, 2, vec![0; 4], LabelMode::Binary).unwrap();
    let pred = BinaryMask::new(4, 1, vec![false; 4]).unwrap();
    assert!(confusion(&pred, &gt).is_err());
    assert!(GroundTruthMask::new(2, 1, vec![0, 1], LabelMode::Cd2014).is_err());
}

#[test]
fn pooling_sums_counts() {
    let gt1 = GroundTruthMask::new(2, 1, vec![255, 0], LabelMode::Binary).unwrap();
    let gt2 = GroundTruthMask::new(2, 1, vec![0, 255], LabelMode::Binary).unwrap();
    let p1 = BinaryMask::new(2, 1, vec![true, false]).unwrap();
    let p2 = BinaryMask::new(2, 1, vec![true, false]).unwrap();
    let v = evaluate_predictions(&[p1, p2], &[gt1, gt2]).unwrap();
    assert_eq!(v.frames[0].counts, ConfusionReport::new(1, 1, 0, 0));
    assert_eq!(v.frames[1].counts, ConfusionReport::new(0, 0, 1, 1));
    assert_eq!(v.pooled, ConfusionReport::new(1, 1, 1, 1));
    assert_eq!(v.metrics.unwrap().f_measure, 0.5);
}

#[test]
fn published_category_values_average_to_overall() {
    let categories = [
        ("baseline", 0.9919),
        ("cameraJitter", 0.9799),
        ("badWeather", 0.9569),
        ("dynamicBackground", 0.9687),
        ("intermittentObjectMotion", 0.9755),
        ("lowFramerate", 0.8498),
        ("nightVideos", 0.9388),
        ("PTZ", 0.8967),
        ("shadow", 0.9852),
        ("thermal", 0.9818),
        ("turbulence", 0.9637),
    ];
    let videos: Vec<VideoResult> = categories
        .iter()
        .map(|&(c, f)| VideoResult {
            category: c.into(),
            video: "all".into(),
            metrics: Some(Metrics {
                precision: f,
                recall: f,
                f_measure: f,
                pwc: 0.0,
            }),
        })
        .collect();
    let table = aggregate("crcnn", &videos).unwrap();
    assert_eq!(table.categories.len(), 11);
    assert!(
        (table.overall.f_measure - 0.9535).abs() < 5e-4,
        "{}",
        table.overall.f_measure
    );
}

#[test]
fn two_categories_average() {
    let m = |f| Metrics {
        precision: f,
        recall: f,
        f_measure: f,
        pwc: 0.0,
    };
    let overall = mean_metrics(&[m(0.9), m(0.7)]).unwrap();
    assert!((overall.f_measure - 0.8).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn threshold_is_monotone(seed in any::<u64>(), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = Tensor4::from_fn(Shape4::new(1, 1, 12, 12), |_, _, _, _| rng.random_range(0.0..=1.0f32));
        let p = ProbabilityMask::new(probs).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = binarize(&p, lo).unwrap();
        let b = binarize(&p, hi).unwrap();
        // every foreground pixel at the higher threshold is foreground at the lower one
        prop_assert!(a.bits().iter().zip(b.bits()).all(|(&x, &y)| x || !y));
    }

    #[test]
    fn excluded_regions_never_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_gt(&mut rng, 16, 16);
        let pred = random_pred(&mut rng, 16, 16);
        let mut flipped = pred.clone();
        for (b, &g) in flipped.bits_mut().iter_mut().zip(gt.labels()) {
            if g == label::OUTSIDE_ROI || g == label::UNKNOWN {
                *b = !*b;
            }
        }
        let r1 = confusion(&pred, &gt).unwrap();
        let r2 = confusion(&flipped, &gt).unwrap();
        prop_assert_eq!(r1, r2);
        prop_assert_eq!(r1.metrics(), r2.metrics());
    }

    #[test]
    fn swapping_roles_swaps_fp_and_fn(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let to_gt = |m: &BinaryMask| {
            GroundTruthMask::new(16, 16, m.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(), LabelMode::Binary).unwrap()
        };
        let a = random_pred(&mut rng, 16, 16);
        let b = random_pred(&mut rng, 16, 16);
        let ab = confusion(&a, &to_gt(&b)).unwrap();
        let ba = confusion(&b, &to_gt(&a)).unwrap();
        prop_assert_eq!((ab.tp, ab.tn, ab.fp, ab.fn_), (ba.tp, ba.tn, ba.fn_, ba.fp));
    }

    #[test]
    fn metric_identities(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let r = ConfusionReport::new(tp, tn, fp, fn_);
        if let Some(m) = r.metrics() {
            for v in [m.precision, m.recall, m.f_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((0.0..=100.0).contains(&m.pwc));
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((h - m.f_measure).abs() < 1e-12);
            }
        }
    }
}
