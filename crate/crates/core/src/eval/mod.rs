//! Thresholding, confusion counting with CD2014 label semantics, and the
//! precision / recall / F-measure / PWC family.

mod aggregate;
mod confusion;
mod masks;
mod video;

pub use aggregate::{aggregate, mean_metrics, summary_csv, CategoryRow, SummaryTable, VideoResult};
pub use confusion::{confusion, ConfusionReport, Metrics};
pub use masks::{
    binarize, label, BinaryMask, GroundTruthMask, LabelMode, ProbabilityMask, DEFAULT_THRESHOLD,
};
pub use video::{
    evaluate_predictions, evaluate_video, CascadeModel, FrameEvaluation, InferenceMode,
    VideoEvaluation,
};
