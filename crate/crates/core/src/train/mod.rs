//! Two-phase training: BCNN regresses the median background, then SCNN
//! learns foreground masks from the frame stacked with the frozen BCNN's
//! residual map.

mod config;
mod engine;
mod schedule;

pub use config::TrainConfig;
pub use engine::{
    mask_target, prepare_bcnn_data, prepare_scnn_data, train_bcnn, train_cascade, train_scnn,
    CascadeInputs, CascadeOutcome, EpochRecord, NullObserver, PatchData, TrainObserver,
    TrainOutcome, TrainReport,
};
pub use schedule::{LrEvent, PlateauSchedule, ScheduleAction};
