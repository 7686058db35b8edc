//! Seeded synthetic videos with exact ground truth.
//!
//! Motion and jitter are whole pixels, so every mask is the analytic
//! footprint of the scene geometry at that frame.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::eval::{label, GroundTruthMask, LabelMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackgroundKind {
    Static {
        level: u8,
    },
    /// Smooth seeded pattern plus fine grain, values within `[40, 170]`.
    Textured,
    /// The textured pattern with fresh Gaussian noise of this standard
    /// deviation (in gray levels) on every frame.
    DynamicNoise {
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectShape {
    Rect {
        width: usize,
        height: usize,
    },
    /// Pixels within `radius` of the center of a `2r+1` square.
    Disc {
        radius: usize,
    },
}

impl ObjectShape {
    pub fn extent(&self) -> (usize, usize) {
        match *self {
            ObjectShape::Rect { width, height } => (width, height),
            ObjectShape::Disc { radius } => (2 * radius + 1, 2 * radius + 1),
        }
    }

    /// Whether local pixel `(x, y)` of the bounding box is covered.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        match *self {
            ObjectShape::Rect { .. } => true,
            ObjectShape::Disc { radius } => {
                let (dx, dy) = (x as i64 - radius as i64, y as i64 - radius as i64);
                dx * dx + dy * dy <= (radius * radius) as i64
            }
        }
    }

    pub fn area(&self) -> usize {
        let (w, h) = self.extent();
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| self.covers(x, y))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    /// Displacement of the shadow footprint from the object.
    pub offset: (i64, i64),
    /// Multiplier applied to the background under the shadow, in `[0, 1]`.
    pub attenuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ObjectShape,
    /// Top-left corner at frame 0.
    pub start: (i64, i64),
    /// Pixels per frame; the object bounces off the frame borders.
    pub velocity: (i64, i64),
    pub intensity: u8,
    pub shadow: Option<Shadow>,
}

impl SceneObject {
    /// Top-left corner at frame `t`.
    pub fn position(&self, t: usize, width: usize, height: usize) -> (usize, usize) {
        let (w, h) = self.shape.extent();
        (
            reflect(
                self.start.0 + self.velocity.0 * t as i64,
                width.saturating_sub(w),
            ),
            reflect(
                self.start.1 + self.velocity.1 * t as i64,
                height.saturating_sub(h),
            ),
        )
    }
}

/// Folds `x` into `[0, range]` by mirroring at both ends.
fn reflect(x: i64, range: usize) -> usize {
    if range == 0 {
        return 0;
    }
    let r = range as i64;
    let m = x.rem_euclid(2 * r);
    (if m > r { 2 * r - m } else { m }) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub seed: u64,
    pub background: BackgroundKind,
    pub objects: Vec<SceneObject>,
    /// Maximum absolute background shift per axis, in pixels.
    pub jitter_amplitude: usize,
    /// Gray levels added to the background per frame.
    pub illumination_drift: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frame_count: 100,
            seed: 0,
            background: BackgroundKind::Textured,
            objects: Vec::new(),
            jitter_amplitude: 0,
            illumination_drift: 0.0,
        }
    }
}

/// Frame ranges of the acceptance fixture (0-based, half-open).
pub const FIXTURE_BACKGROUND_FRAMES: usize = 100;
pub const FIXTURE_TRAIN: core::ops::Range<usize> = 100..120;
pub const FIXTURE_EVAL: core::ops::Range<usize> = 60..100;

impl SceneConfig {
    /// 64x64 textured static scene, 120 frames, one bright 10x10 square
    /// moving diagonally.
    pub fn acceptance_fixture(seed: u64) -> Self {
        Self {
            frame_count: 120,
            seed,
            objects: vec![SceneObject {
                shape: ObjectShape::Rect {
                    width: 10,
                    height: 10,
                },
                start: (5, 12),
                velocity: (3, 2),
                intensity: 230,
                shadow: None,
            }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 {
            return Err(Error::invalid(format!(
                "scene needs positive size and frame count, got {}x{} x {}",
                self.width, self.height, self.frame_count
            )));
        }
        if let BackgroundKind::DynamicNoise { sigma } = self.background {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!(
                    "noise sigma {sigma} must be finite and >= 0"
                )));
            }
        }
        if !self.illumination_drift.is_finite() {
            return Err(Error::invalid("illumination drift must be finite"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let (w, h) = o.shape.extent();
            if w == 0 || h == 0 {
                return Err(Error::invalid(format!("object {i} is empty")));
            }
            if w > self.width || h > self.height {
                return Err(Error::invalid(format!(
                    "object {i} is {w}x{h}, larger than the {}x{} frame",
                    self.width, self.height
                )));
            }
            if let Some(s) = o.shadow {
                if !(0.0..=1.0).contains(&s.attenuation) {
                    return Err(Error::invalid(format!(
                        "object {i}: shadow attenuation {} outside [0, 1]",
                        s.attenuation
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Frame,
    /// CD2014 labels: 255 object, 50 shadow, 0 elsewhere.
    pub mask: GroundTruthMask,
}

impl LabeledFrame {
    pub fn count(&self, value: u8) -> usize {
        self.mask.labels().iter().filter(|&&v| v == value).count()
    }
}

fn textured(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use core::f64::consts::TAU;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(1.0..5.0) / width as f64,
                rng.random_range(1.0..5.0) / height as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(10.0..18.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut v = 105.0;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * Float::sin(TAU * (fx * x as f64 + fy * y as f64) + phase);
            }
            v += rng.random_range(-8.0..8.0);
            out.push(v.clamp(40.0, 170.0));
        }
    }
    out
}

fn to_u8(v: f64) -> u8 {
    Float::round(v).clamp(0.0, 255.0) as u8
}

/// Renders the whole sequence.
pub fn generate(config: &SceneConfig) -> Result<Vec<LabeledFrame>> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut base_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = match config.background {
        BackgroundKind::Static { level } => vec![level as f64; w * h],
        BackgroundKind::Textured | BackgroundKind::DynamicNoise { .. } => {
            textured(w, h, &mut base_rng)
        }
    };
    let noise = match config.background {
        BackgroundKind::DynamicNoise { sigma } if sigma > 0.0 => {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("{e}")))?)
        }
        _ => None,
    };

    let mut out = Vec::with_capacity(config.frame_count);
    for t in 0..config.frame_count {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64 + 1);
        let a = config.jitter_amplitude as i64;
        let (jx, jy) = if a > 0 {
            (rng.random_range(-a..=a), rng.random_range(-a..=a))
        } else {
            (0, 0)
        };
        let drift = config.illumination_drift * t as f64;
        let mut px = vec![0.0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                let sx = (x as i64 - jx).clamp(0, w as i64 - 1) as usize;
                let sy = (y as i64 - jy).clamp(0, h as i64 - 1) as usize;
                let mut v = base[sy * w + sx] + drift;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                px[y * w + x] = v;
            }
        }
        let mut labels = vec![label::BACKGROUND; w * h];

        for o in &config.objects {
            if let Some(s) = o.shadow {
                let (ox, oy) = o.position(t, w, h);
                stamp(
                    o,
                    ox as i64 + s.offset.0,
                    oy as i64 + s.offset.1,
                    w,
                    h,
                    |i| {
                        if labels[i] == label::BACKGROUND {
                            labels[i] = label::SHADOW;
                            px[i] *= s.attenuation;
                        }
                    },
                );
            }
        }
        for o in &config.objects {
            let (ox, oy) = o.position(t, w, h);
            stamp(o, ox as i64, oy as i64, w, h, |i| {
                labels[i] = label::FOREGROUND;
                px[i] = o.intensity as f64;
            });
        }

        let frame = Frame::new(w, h, px.into_iter().map(to_u8).collect())?;
        let mask = GroundTruthMask::new(w, h, labels, LabelMode::Cd2014)?;
        out.push(LabeledFrame { frame, mask });
    }
    Ok(out)
}

/// Calls `f` with the flat index of every covered in-frame pixel of `o`
/// placed at `(ox, oy)`.
fn stamp(o: &SceneObject, ox: i64, oy: i64, w: usize, h: usize, mut f: impl FnMut(usize)) {
    let (ew, eh) = o.shape.extent();
    for ly in 0..eh {
        for lx in 0..ew {
            let (x, y) = (ox + lx as i64, oy + ly as i64);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && o.shape.covers(lx, ly) {
                f(y as usize * w + x as usize);
            }
        }
    }
}
