use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::confusion::{confusion, ConfusionReport, Metrics};
use super::masks::{binarize, BinaryMask, GroundTruthMask, ProbabilityMask};
use crate::checkpoint::Checkpoint;
use crate::data::{self, Frame, PatchSet};
use crate::error::{Error, Result};
use crate::model::{self, Network, NetworkName};
use crate::ops::Mode;
use crate::tensor::Tensor4;

/// How a frame is pushed through the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InferenceMode {
    /// Whole frame at once; both networks are fully convolutional.
    FullFrame,
    /// Overlapping patches, `batch` at a time, with overlapping
    /// probabilities averaged. Bounds peak memory on large frames.
    Patched {
        patch_size: usize,
        overlap: f64,
        batch: usize,
    },
}

/// A trained BCNN/SCNN pair with the mean used to center its inputs.
#[derive(Debug, Clone)]
pub struct CascadeModel {
    pub bcnn: Network<f32>,
    pub scnn: Network<f32>,
    pub dataset_mean: f64,
}

impl CascadeModel {
    pub fn from_checkpoints(bcnn: Checkpoint, scnn: Checkpoint) -> Result<Self> {
        if bcnn.network.name() != NetworkName::Bcnn || scnn.network.name() != NetworkName::Scnn {
            return Err(Error::invalid(alloc::format!(
                "expected a bcnn and an scnn checkpoint, got {} and {}",
                bcnn.network.name(),
                scnn.network.name()
            )));
        }
        if bcnn.metadata.dataset_mean != scnn.metadata.dataset_mean {
            return Err(Error::invalid(alloc::format!(
                "checkpoints disagree on the dataset mean ({} vs {})",
                bcnn.metadata.dataset_mean,
                scnn.metadata.dataset_mean
            )));
        }
        Ok(Self {
            dataset_mean: bcnn.metadata.dataset_mean,
            bcnn: bcnn.network,
            scnn: scnn.network,
        })
    }

    /// Foreground probabilities for one grayscale frame. Batch norm uses its
    /// running statistics.
    pub fn probabilities(&self, frame: &Frame, mode: InferenceMode) -> Result<ProbabilityMask> {
        let f = data::normalize(frame, self.dataset_mean)?.tensor;
        let p = match mode {
            InferenceMode::FullFrame => {
                model::segment_probabilities(&f, &self.bcnn, &self.scnn, Mode::Infer)?
            }
            InferenceMode::Patched {
                patch_size,
                overlap,
                batch,
            } => {
                let set = data::extract_patches(&f, patch_size, overlap)?;
                let batch = batch.max(1);
                let mut outs = Vec::new();
                let idx: Vec<usize> = (0..set.len()).collect();
                for chunk in idx.chunks(batch) {
                    let x = set.patches.gather(chunk);
                    outs.push(model::segment_probabilities(
                        &x,
                        &self.bcnn,
                        &self.scnn,
                        Mode::Infer,
                    )?);
                }
                data::reassemble(&PatchSet {
                    patches: Tensor4::concat_batch(&outs)?,
                    ..set
                })?
            }
        };
        ProbabilityMask::new(p)
    }

    pub fn segment(
        &self,
        frame: &Frame,
        threshold: f64,
        mode: InferenceMode,
    ) -> Result<BinaryMask> {
        binarize(&self.probabilities(frame, mode)?, threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub index: usize,
    pub counts: ConfusionReport,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEvaluation {
    pub frames: Vec<FrameEvaluation>,
    /// Raw counts summed over frames with at least one scored pixel.
    pub pooled: ConfusionReport,
    pub metrics: Option<Metrics>,
}

/// Scores already-binarized predictions against aligned ground truth.
pub fn evaluate_predictions(
    preds: &[BinaryMask],
    gts: &[GroundTruthMask],
) -> Result<VideoEvaluation> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(alloc::format!(
            "{} predictions but {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut frames = Vec::with_capacity(preds.len());
    let mut pooled = ConfusionReport::default();
    for (index, (p, g)) in preds.iter().zip(gts).enumerate() {
        let counts = confusion(p, g)?;
        // frames with nothing scored add zero anyway; they are kept in the
        // per-frame list with undefined metrics
        pooled += counts;
        frames.push(FrameEvaluation {
            index,
            counts,
            metrics: counts.metrics(),
        });
    }
    Ok(VideoEvaluation {
        frames,
        pooled,
        metrics: pooled.metrics(),
    })
}

/// Segments every frame and scores it.
pub fn evaluate_video(
    frames: &[Frame],
    gts: &[GroundTruthMask],
    model: &CascadeModel,
    threshold: f64,
    mode: InferenceMode,
) -> Result<VideoEvaluation> {
    if frames.len() != gts.len() {
        return Err(Error::invalid(alloc::format!(
            "{} frames but {} ground-truth masks",
            frames.len(),
            gts.len()
        )));
    }
    let preds = frames
        .iter()
        .map(|f| model.segment(f, threshold, mode))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, gts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::LabelMode;
    use alloc::vec;

    #[test]
    fn single_frame_pooled_equals_frame() {
        let gt = GroundTruthMask::new(2, 2, vec![0, 255, 255, 85], LabelMode::Cd2014).unwrap();
        let p = BinaryMask::new(2, 2, vec![true, true, false, false]).unwrap();
        let v = evaluate_predictions(&[p], &[gt]).unwrap();
        assert_eq!(v.pooled, v.frames[0].counts);
        assert_eq!(v.metrics, v.frames[0].metrics);
    }

    #[test]
    fn empty_frame_does_not_disturb_pooling() {
        let roi = GroundTruthMask::new(2, 1, vec![85, 85], LabelMode::Cd2014).unwrap();
        let gt = GroundTruthMask::new(2, 1, vec![255, 0], LabelMode::Cd2014).unwrap();
        let p = BinaryMask::new(2, 1, vec![true, false]).unwrap();
        let v = evaluate_predictions(&[p.clone(), p], &[roi, gt]).unwrap();
        assert!(v.frames[0].metrics.is_none());
        assert_eq!(v.pooled, ConfusionReport::new(1, 1, 0, 0));
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate_predictions(
            &[],
            &[GroundTruthMask::new(1, 1, vec![0], LabelMode::Binary).unwrap()]
        )
        .is_err());
    }
}
