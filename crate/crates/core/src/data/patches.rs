use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

use super::background::DeterministicBackground;

/// Largest patch side allowed.
pub const MAX_PATCH: usize = 50;

/// Square patches cut from one or more same-sized images.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T = f32> {
    pub patch_size: usize,
    pub stride: usize,
    /// Height and width of the source image.
    pub source: (usize, usize),
    /// `(m, channels, p, p)`.
    pub patches: Tensor4<T>,
    /// Top-left `(y, x)` of every patch, aligned with the batch axis.
    pub origins: Vec<(usize, usize)>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Fraction of a patch shared with its grid neighbour.
    pub fn overlap_ratio(&self) -> f64 {
        1.0 - self.stride as f64 / self.patch_size as f64
    }

    /// Patch sets cut with the same layout from successive frames.
    pub fn concat(parts: &[PatchSet<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("PatchSet::concat"))?;
        let tensors: Vec<Tensor4<T>> = parts.iter().map(|p| p.patches.clone()).collect();
        let patches = Tensor4::concat_batch(&tensors)?;
        let origins = parts
            .iter()
            .flat_map(|p| p.origins.iter().copied())
            .collect();
        Ok(Self {
            patch_size: first.patch_size,
            stride: first.stride,
            source: first.source,
            patches,
            origins,
        })
    }
}

/// Stride for a patch side and overlap ratio: `max(1, round(p * (1 - overlap)))`,
/// then kept within `[ceil(p / 4), floor(p / 2)]` so the realized overlap stays
/// in `[0.5, 0.75]` whenever `p >= 2`.
pub fn stride_for(p: usize, overlap: f64) -> usize {
    let raw = num_traits::Float::round(p as f64 * (1.0 - overlap)) as usize;
    let lo = p.div_ceil(4).max(1);
    let hi = (p / 2).max(1);
    raw.max(1).clamp(lo, hi)
}

fn grid(extent: usize, p: usize, stride: usize) -> Vec<usize> {
    let last = extent - p;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

fn check_params(h: usize, w: usize, p: usize, overlap: f64) -> Result<()> {
    if p == 0 || p > MAX_PATCH {
        return Err(Error::invalid(format!(
            "patch size {p} outside 1..={MAX_PATCH}"
        )));
    }
    if p > h || p > w {
        return Err(Error::invalid(format!(
            "patch size {p} exceeds image {h}x{w}"
        )));
    }
    if !(0.5..=0.75).contains(&overlap) {
        return Err(Error::invalid(format!(
            "overlap {overlap} outside [0.5, 0.75]"
        )));
    }
    Ok(())
}

fn cut<T: Scalar>(
    image: &Tensor4<T>,
    item: usize,
    origins: &[(usize, usize)],
    p: usize,
) -> Tensor4<T> {
    let s = image.shape();
    Tensor4::from_fn(Shape4::new(origins.len(), s.c, p, p), |n, c, y, x| {
        let (oy, ox) = origins[n];
        image.get(item, c, oy + y, ox + x)
    })
}

/// Overlapping square patches of every item of `image`. The last row and
/// column of the grid are clamped to the border so every pixel is covered.
pub fn extract_patches<T: Scalar>(
    image: &Tensor4<T>,
    p: usize,
    overlap: f64,
) -> Result<PatchSet<T>> {
    let s = image.shape();
    check_params(s.h, s.w, p, overlap)?;
    let stride = stride_for(p, overlap);
    let ys = grid(s.h, p, stride);
    let xs = grid(s.w, p, stride);
    let layout: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect();
    let mut parts = Vec::with_capacity(s.n);
    let mut origins = Vec::with_capacity(s.n * layout.len());
    for item in 0..s.n {
        parts.push(cut(image, item, &layout, p));
        origins.extend_from_slice(&layout);
    }
    Ok(PatchSet {
        patch_size: p,
        stride,
        source: (s.h, s.w),
        patches: Tensor4::concat_batch(&parts)?,
        origins,
    })
}

/// Background patches cut at the same origins as `layout`, one per patch.
pub fn replicate_background_patches(
    bg: &DeterministicBackground,
    layout: &PatchSet<f32>,
) -> Result<PatchSet<f32>> {
    let s = bg.0.shape();
    if (s.h, s.w) != layout.source {
        return Err(Error::invalid(format!(
            "background is {}x{}, patches were cut from {}x{}",
            s.h, s.w, layout.source.0, layout.source.1
        )));
    }
    Ok(PatchSet {
        patch_size: layout.patch_size,
        stride: layout.stride,
        source: layout.source,
        patches: cut(&bg.0, 0, &layout.origins, layout.patch_size),
        origins: layout.origins.clone(),
    })
}

/// Averages patches back onto a `(1, c, h, w)` canvas using their origins.
/// Sums are accumulated in `f64`, so unmodified `f32` patches reproduce the
/// source exactly.
pub fn reassemble<T: Scalar>(set: &PatchSet<T>) -> Result<Tensor4<T>> {
    let (h, w) = set.source;
    let ps = set.patches.shape();
    let p = set.patch_size;
    let plane = h * w;
    let mut sum = vec![0.0f64; ps.c * plane];
    let mut count = vec![0u32; plane];
    for (n, &(oy, ox)) in set.origins.iter().enumerate() {
        for c in 0..ps.c {
            for y in 0..p {
                for x in 0..p {
                    sum[c * plane + (oy + y) * w + ox + x] += set.patches.get(n, c, y, x).as_f64();
                }
            }
        }
        for y in 0..p {
            for x in 0..p {
                count[(oy + y) * w + ox + x] += 1;
            }
        }
    }
    if count.iter().any(|&c| c == 0) {
        return Err(Error::invalid("patches do not cover the canvas"));
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &v)| T::from_f64(v / count[i % plane] as f64))
        .collect();
    Tensor4::from_vec(Shape4::new(1, ps.c, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_half_overlap() {
        let img = Tensor4::<f32>::from_fn(Shape4::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32);
        let set = extract_patches(&img, 2, 0.5).unwrap();
        assert_eq!(set.stride, 1);
        assert_eq!(set.len(), 9);
        assert_eq!(set.origins[4], (1, 1));
        assert_eq!(set.patches.item(4), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn whole_image_patch() {
        let img = Tensor4::<f32>::zeros(Shape4::new(1, 1, 7, 7));
        let set = extract_patches(&img, 7, 0.6).unwrap();
        assert_eq!(set.origins, vec![(0, 0)]);
    }

    #[test]
    fn last_patch_is_clamped() {
        let img = Tensor4::<f32>::zeros(Shape4::new(1, 1, 10, 10));
        let set = extract_patches(&img, 4, 0.5).unwrap();
        let ys: Vec<usize> = set.origins.iter().map(|o| o.0).collect();
        assert!(ys.contains(&6));
        assert_eq!(set.len(), 16); // 0, 2, 4, 6 in each direction
    }

    #[test]
    fn invalid_parameters() {
        let img = Tensor4::<f32>::zeros(Shape4::new(1, 1, 60, 60));
        assert!(extract_patches(&img, 51, 0.5).is_err());
        assert!(extract_patches(&img, 0, 0.5).is_err());
        assert!(extract_patches(&img, 8, 0.3).is_err());
        let small = Tensor4::<f32>::zeros(Shape4::new(1, 1, 5, 9));
        assert!(extract_patches(&small, 6, 0.5).is_err());
    }

    #[test]
    fn stride_rounding() {
        assert_eq!(stride_for(32, 0.5), 16);
        assert_eq!(stride_for(48, 0.5), 24);
        assert_eq!(stride_for(48, 0.75), 12);
        assert_eq!(stride_for(3, 0.5), 1);
        assert_eq!(stride_for(1, 0.5), 1);
    }

    #[test]
    fn background_replication_matches_slices() {
        let bg =
            DeterministicBackground(Tensor4::from_fn(Shape4::new(1, 1, 6, 5), |_, _, y, x| {
                (y * 10 + x) as f32
            }));
        let frames = Tensor4::<f32>::zeros(Shape4::new(3, 1, 6, 5));
        let layout = extract_patches(&frames, 3, 0.5).unwrap();
        let per_frame = layout.len() / 3;
        let rep = replicate_background_patches(&bg, &layout).unwrap();
        assert_eq!(rep.len(), 3 * per_frame);
        assert_eq!(rep.origins, layout.origins);
        for (n, &(oy, ox)) in rep.origins.iter().enumerate() {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(rep.patches.get(n, 0, y, x), bg.0.get(0, 0, oy + y, ox + x));
                }
            }
        }
        let wrong = DeterministicBackground(Tensor4::zeros(Shape4::new(1, 1, 6, 6)));
        assert!(replicate_background_patches(&wrong, &layout).is_err());
    }

    #[test]
    fn reassembly_reconstructs() {
        let img = Tensor4::<f32>::from_fn(Shape4::new(1, 2, 9, 7), |_, c, y, x| {
            (c * 100 + y * 7 + x) as f32 / 3.0
        });
        let set = extract_patches(&img, 4, 0.6).unwrap();
        assert_eq!(reassemble(&set).unwrap(), img);
    }
}
