use crcnn_core::data::compute_background;
use crcnn_core::eval::label;
use crcnn_core::synth::{generate, BackgroundKind, ObjectShape, SceneConfig, SceneObject, Shadow};

fn object(shape: ObjectShape, start: (i64, i64), velocity: (i64, i64)) -> SceneObject {
    SceneObject {
        shape,
        start,
        velocity,
        intensity: 240,
        shadow: None,
    }
}

#[test]
fn no_objects_no_foreground() {
    let c = SceneConfig {
        frame_count: 5,
        jitter_amplitude: 2,
        illumination_drift: 0.5,
        ..SceneConfig::default()
    };
    for f in generate(&c).unwrap() {
        assert!(f.mask.labels().iter().all(|&l| l == label::BACKGROUND));
    }
}

#[test]
fn static_square_has_64_pixels() {
    let c = SceneConfig {
        frame_count: 6,
        objects: vec![object(
            ObjectShape::Rect {
                width: 8,
                height: 8,
            },
            (10, 20),
            (0, 0),
        )],
        ..SceneConfig::default()
    };
    let seq = generate(&c).unwrap();
    for f in &seq {
        assert_eq!(f.count(label::FOREGROUND), 64);
        assert_eq!(f.mask.labels()[20 * 64 + 10], 255);
        assert_eq!(f.mask.labels()[27 * 64 + 17], 255);
        assert_eq!(f.mask.labels()[28 * 64 + 17], 0);
    }
    assert_eq!(seq[0].frame, seq[5].frame);
}

#[test]
fn masks_equal_analytic_footprints() {
    let c = SceneConfig {
        width: 40,
        height: 30,
        frame_count: 60,
        objects: vec![
            object(
                ObjectShape::Rect {
                    width: 7,
                    height: 4,
                },
                (0, 3),
                (5, -3),
            ),
            object(ObjectShape::Disc { radius: 3 }, (30, 20), (-2, 1)),
        ],
        jitter_amplitude: 1,
        ..SceneConfig::default()
    };
    let seq = generate(&c).unwrap();
    for (t, f) in seq.iter().enumerate() {
        let mut want = vec![0u8; 40 * 30];
        for o in &c.objects {
            let (ox, oy) = o.position(t, 40, 30);
            let (ew, eh) = o.shape.extent();
            assert!(ox + ew <= 40 && oy + eh <= 30);
            for y in 0..eh {
                for x in 0..ew {
                    if o.shape.covers(x, y) {
                        want[(oy + y) * 40 + ox + x] = 255;
                    }
                }
            }
        }
        assert_eq!(f.mask.labels(), &want[..], "frame {t}");
        for (p, &l) in f.frame.pixels().iter().zip(f.mask.labels()) {
            if l == 255 {
                assert_eq!(*p, 240);
            }
        }
    }
}

#[test]
fn seed_determinism() {
    let mut c = SceneConfig::acceptance_fixture(7);
    c.background = BackgroundKind::DynamicNoise { sigma: 6.0 };
    c.jitter_amplitude = 1;
    let a = generate(&c).unwrap();
    assert_eq!(a, generate(&c).unwrap());
    c.seed = 8;
    assert_ne!(a, generate(&c).unwrap());
}

#[test]
fn noise_has_requested_spread() {
    let sigma = 8.0;
    let c = SceneConfig {
        width: 16,
        height: 16,
        frame_count: 500,
        background: BackgroundKind::DynamicNoise { sigma },
        ..SceneConfig::default()
    };
    let seq = generate(&c).unwrap();
    for i in 0..256 {
        let v: Vec<f64> = seq.iter().map(|f| f.frame.pixels()[i] as f64).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((sd - sigma).abs() <= 0.15 * sigma, "pixel {i}: sd {sd}");
    }
}

#[test]
fn static_scene_median_is_the_background() {
    let seq = generate(&SceneConfig::acceptance_fixture(1)).unwrap();
    let frames: Vec<_> = seq.iter().map(|l| l.frame.clone()).collect();
    let bg = compute_background(&frames[..100]).unwrap().to_frame();
    // the square never sits on one pixel for half of the frames
    let empty = generate(&SceneConfig {
        objects: vec![],
        ..SceneConfig::acceptance_fixture(1)
    })
    .unwrap();
    assert_eq!(bg, empty[0].frame);
}

#[test]
fn shadows_are_labelled_fifty() {
    let mut o = object(ObjectShape::Disc { radius: 4 }, (20, 20), (1, 0));
    o.shadow = Some(Shadow {
        offset: (3, 3),
        attenuation: 0.6,
    });
    let c = SceneConfig {
        frame_count: 3,
        background: BackgroundKind::Static { level: 150 },
        objects: vec![o],
        ..SceneConfig::default()
    };
    for f in generate(&c).unwrap() {
        assert_eq!(f.count(label::FOREGROUND), o.shape.area());
        assert!(f.count(label::SHADOW) > 0);
        for (p, &l) in f.frame.pixels().iter().zip(f.mask.labels()) {
            if l == label::SHADOW {
                assert_eq!(*p, 90);
            }
        }
    }
}

#[test]
fn oversized_objects_fail() {
    let c = SceneConfig {
        width: 10,
        height: 10,
        objects: vec![object(ObjectShape::Disc { radius: 5 }, (0, 0), (0, 0))],
        ..SceneConfig::default()
    };
    assert!(generate(&c).is_err());
}
