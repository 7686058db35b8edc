use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// CD2014 ground-truth label values.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const SHADOW: u8 = 50;
    pub const OUTSIDE_ROI: u8 = 85;
    pub const UNKNOWN: u8 = 170;
    pub const FOREGROUND: u8 = 255;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// `{0, 50, 85, 170, 255}`.
    Cd2014,
    /// `{0, 255}` only.
    Binary,
}

impl LabelMode {
    pub fn allows(self, v: u8) -> bool {
        match self {
            LabelMode::Cd2014 => matches!(
                v,
                label::BACKGROUND
                    | label::SHADOW
                    | label::OUTSIDE_ROI
                    | label::UNKNOWN
                    | label::FOREGROUND
            ),
            LabelMode::Binary => v == label::BACKGROUND || v == label::FOREGROUND,
        }
    }
}

/// Per-pixel SCNN output for one frame, shape `(1, 1, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask<T = f32>(Tensor4<T>);

impl<T: Scalar> ProbabilityMask<T> {
    pub fn new(t: Tensor4<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape(
                "ProbabilityMask",
                Shape4::new(1, 1, s.h, s.w),
                s,
            ));
        }
        if let Some((i, v)) = t
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::invalid(format!(
                "probability {v:?} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor4<T> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.shape().w
    }

    pub fn height(&self) -> usize {
        self.0.shape().h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Length {
                op: "BinaryMask::new",
                detail: format!(
                    "{width}x{height} needs {} bits, got {}",
                    width * height,
                    bits.len()
                ),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count_foreground(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0 / 255 grayscale image.
    pub fn to_frame(&self) -> Frame {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Frame::new(self.width, self.height, px).expect("dims already validated")
    }
}

/// Foreground where `probability >= threshold`.
pub fn binarize<T: Scalar>(
    probabilities: &ProbabilityMask<T>,
    threshold: f64,
) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let bits = probabilities
        .0
        .data()
        .iter()
        .map(|&p| p.as_f64() >= threshold)
        .collect();
    BinaryMask::new(probabilities.width(), probabilities.height(), bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    mode: LabelMode,
}

impl GroundTruthMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, mode: LabelMode) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Length {
                op: "GroundTruthMask::new",
                detail: format!(
                    "{width}x{height} needs {} labels, got {}",
                    width * height,
                    labels.len()
                ),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &v)| !mode.allows(v)) {
            return Err(Error::UnknownLabel { label, index });
        }
        Ok(Self {
            width,
            height,
            labels,
            mode,
        })
    }

    pub fn from_frame(frame: &Frame, mode: LabelMode) -> Result<Self> {
        Self::new(frame.width(), frame.height(), frame.pixels().to_vec(), mode)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    /// Pixels that take part in scoring.
    pub fn scored(&self, i: usize) -> bool {
        !matches!(self.labels[i], label::OUTSIDE_ROI | label::UNKNOWN)
    }
}
