//! Frame preparation: grayscale conversion, centering, median background,
//! overlapping patches, and seeded train/validation batching.

mod background;
mod frame;
mod patches;
mod split;

pub use background::{compute_background, DeterministicBackground};
pub use frame::{dataset_mean, luma, normalize, to_grayscale, Frame, NormalizedFrame, RgbFrame};
pub use patches::{
    extract_patches, reassemble, replicate_background_patches, stride_for, PatchSet, MAX_PATCH,
};
pub use split::{split_and_batch, Split};
