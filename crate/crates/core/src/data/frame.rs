use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame dimensions must be >= 1"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, alloc::vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `(1, 1, h, w)` tensor of `pixel / 255`.
    pub fn to_unit_tensor(&self) -> Tensor4<f32> {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor4::from_vec(Shape4::new(1, 1, self.height, self.width), data)
            .expect("frame is non-empty")
    }
}

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "malformed RGB image: {width}x{height} with {} bytes",
                rgb.len()
            )));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// ITU-R BT.601 luma, rounded to nearest.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    num_traits::Float::round(y).clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(image: &RgbFrame) -> Frame {
    let pixels = image
        .rgb
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    Frame {
        width: image.width,
        height: image.height,
        pixels,
    }
}

/// Centered network input `f = pixel / 255 - mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrame {
    pub tensor: Tensor4<f32>,
    pub mean: f64,
}

impl NormalizedFrame {
    /// Inverse of [`normalize`].
    pub fn to_frame(&self) -> Frame {
        let s = self.tensor.shape();
        let pixels = self
            .tensor
            .data()
            .iter()
            .map(|&v| {
                num_traits::Float::round((v as f64 + self.mean) * 255.0).clamp(0.0, 255.0) as u8
            })
            .collect();
        Frame {
            width: s.w,
            height: s.h,
            pixels,
        }
    }
}

pub fn normalize(frame: &Frame, mean: f64) -> Result<NormalizedFrame> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::invalid(format!("mean {mean} outside [0, 1]")));
    }
    let data = frame
        .pixels
        .iter()
        .map(|&p| (p as f64 / 255.0 - mean) as f32)
        .collect();
    let tensor = Tensor4::from_vec(Shape4::new(1, 1, frame.height, frame.width), data)?;
    Ok(NormalizedFrame { tensor, mean })
}

/// Mean over every pixel of every frame, on the `[0, 1]` scale.
pub fn dataset_mean(frames: &[Frame]) -> Result<f64> {
    let count: usize = frames.iter().map(|f| f.pixels.len()).sum();
    if count == 0 {
        return Err(Error::Empty("dataset_mean: no frames"));
    }
    let sum: u64 = frames
        .iter()
        .flat_map(|f| f.pixels.iter())
        .map(|&p| p as u64)
        .sum();
    Ok(sum as f64 / count as f64 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn luma_values() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(255, 0, 0), 76);
        assert_eq!(luma(0, 255, 0), 150);
        assert_eq!(luma(0, 0, 255), 29);
        for v in 0..=255u8 {
            assert_eq!(luma(v, v, v), v);
        }
    }

    #[test]
    fn grayscale_keeps_dims() {
        let img = RgbFrame::new(2, 1, vec![255, 0, 0, 10, 10, 10]).unwrap();
        let g = to_grayscale(&img);
        assert_eq!((g.width(), g.height()), (2, 1));
        assert_eq!(g.pixels(), &[76, 10]);
        assert!(RgbFrame::new(2, 1, vec![0; 5]).is_err());
    }

    #[test]
    fn zero_mean_is_plain_scaling() {
        let f = Frame::new(2, 1, vec![0, 255]).unwrap();
        let n = normalize(&f, 0.0).unwrap();
        assert_eq!(n.tensor.data(), &[0.0, 1.0]);
    }

    #[test]
    fn constant_frame_centers_to_zero() {
        let f = Frame::filled(4, 3, 128).unwrap();
        let mu = dataset_mean(core::slice::from_ref(&f)).unwrap();
        let n = normalize(&f, mu).unwrap();
        assert!(n.tensor.data().iter().all(|v| v.abs() <= 1.0 / 510.0));
    }

    #[test]
    fn mean_of_black_and_white() {
        let frames = [
            Frame::filled(3, 3, 0).unwrap(),
            Frame::filled(3, 3, 255).unwrap(),
        ];
        assert_eq!(dataset_mean(&frames).unwrap(), 0.5);
        assert!(dataset_mean(&[]).is_err());
    }

    #[test]
    fn normalization_inverts() {
        let f = Frame::new(16, 16, (0..=255).collect()).unwrap();
        for mu in [0.0, 0.37, 0.5, 1.0] {
            assert_eq!(normalize(&f, mu).unwrap().to_frame(), f);
        }
        assert!(normalize(&f, 1.5).is_err());
    }
}
