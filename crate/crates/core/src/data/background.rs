use alloc::vec::Vec;

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Per-pixel temporal median of a frame interval, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicBackground(pub Tensor4<f32>);

impl DeterministicBackground {
    pub fn tensor(&self) -> &Tensor4<f32> {
        &self.0
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self(frame.to_unit_tensor())
    }

    /// Nearest 8-bit image.
    pub fn to_frame(&self) -> Frame {
        let s = self.0.shape();
        let pixels = self
            .0
            .data()
            .iter()
            .map(|&v| num_traits::Float::round(v as f64 * 255.0).clamp(0.0, 255.0) as u8)
            .collect();
        Frame::new(s.w, s.h, pixels).expect("dims come from a valid tensor")
    }
}

/// Pixelwise median; an even count takes the mean of the two central order
/// statistics.
pub fn compute_background(frames: &[Frame]) -> Result<DeterministicBackground> {
    let first = frames
        .first()
        .ok_or(Error::Empty("compute_background: no frames"))?;
    if let Some(bad) = frames.iter().find(|f| !f.same_dims(first)) {
        return Err(Error::invalid(alloc::format!(
            "compute_background: frame {}x{} differs from {}x{}",
            bad.width(),
            bad.height(),
            first.width(),
            first.height()
        )));
    }
    let k = frames.len();
    let mut data = Vec::with_capacity(first.pixels().len());
    // counting sort per pixel over the 256 gray levels
    let mut hist = [0u32; 256];
    for i in 0..first.pixels().len() {
        hist.fill(0);
        for f in frames {
            hist[f.pixels()[i] as usize] += 1;
        }
        let lo_rank = (k - 1) / 2;
        let hi_rank = k / 2;
        let (mut lo, mut hi) = (None, None);
        let mut seen = 0usize;
        for (level, &c) in hist.iter().enumerate() {
            seen += c as usize;
            if lo.is_none() && seen > lo_rank {
                lo = Some(level);
            }
            if seen > hi_rank {
                hi = Some(level);
                break;
            }
        }
        let median = (lo.unwrap() + hi.unwrap()) as f64 / 2.0;
        data.push((median / 255.0) as f32);
    }
    let tensor = Tensor4::from_vec(Shape4::new(1, 1, first.height(), first.width()), data)?;
    Ok(DeterministicBackground(tensor))
}
