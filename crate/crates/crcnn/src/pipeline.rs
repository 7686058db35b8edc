//! The file-level operations behind each subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crcnn_core::checkpoint::Checkpoint;
use crcnn_core::data::{compute_background, DeterministicBackground, Frame};
use crcnn_core::eval::{
    aggregate, evaluate_predictions, summary_csv, BinaryMask, CascadeModel, ConfusionReport,
    GroundTruthMask, InferenceMode, LabelMode, Metrics, SummaryTable, VideoResult,
};
use crcnn_core::model::{NetworkName, PUBLISHED_PARAMETER_TOTAL};
use crcnn_core::train::{
    train_cascade, CascadeInputs, EpochRecord, TrainConfig, TrainObserver, TrainReport,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{FrameRange, VideoDir};
use crate::error::{CliError, Result};
use crate::io::{
    load_checkpoint, read_frame, save_checkpoint, write_atomic, write_frame, write_json,
};

pub const BCNN_FILE: &str = "bcnn.ckpt";
pub const SCNN_FILE: &str = "scnn.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Where the training background comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BackgroundSource {
    /// Median of the first `first_n` frames.
    Cd2014 { first_n: usize },
    /// A supplied `background.pgm`.
    Petrobras,
}

/// Median background of the first `first_n` input frames.
pub fn median_background(video: &VideoDir, first_n: usize) -> Result<DeterministicBackground> {
    if first_n == 0 {
        return Err(CliError::usage("--first-n must be at least 1"));
    }
    let numbers = video.frame_numbers();
    if numbers.len() < first_n {
        return Err(CliError::data(format!(
            "{}: {} frames, background needs {first_n}",
            video.root.display(),
            numbers.len()
        )));
    }
    let frames = video.load_inputs(&numbers[..first_n])?;
    Ok(compute_background(&frames)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub bcnn: usize,
    pub scnn: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub dataset: String,
    pub background: BackgroundSource,
    pub training_frames: Vec<u32>,
    pub dataset_mean: f64,
    pub parameters: ParameterCounts,
    pub config: TrainConfig,
    pub bcnn: TrainReport,
    pub scnn: TrainReport,
    /// Zero in deterministic mode so reruns are byte-identical.
    pub wall_seconds: f64,
}

pub struct TrainRequest<'a> {
    pub video: &'a VideoDir,
    pub source: BackgroundSource,
    pub frames: Option<FrameRange>,
    pub config: TrainConfig,
    pub resume_bcnn: Option<PathBuf>,
    pub out: &'a Path,
    pub record_time: bool,
}

/// Prints one line per epoch on stderr.
pub struct EpochLog {
    start: Instant,
    max_epochs: usize,
    quiet: bool,
}

impl EpochLog {
    pub fn new(max_epochs: usize, quiet: bool) -> Self {
        Self {
            start: Instant::now(),
            max_epochs,
            quiet,
        }
    }
}

impl TrainObserver for EpochLog {
    fn on_phase_start(&mut self, network: NetworkName, patches: usize) {
        if !self.quiet {
            eprintln!("{network}: {patches} patches");
        }
    }

    fn on_epoch(&mut self, network: NetworkName, r: &EpochRecord) {
        if !self.quiet {
            eprintln!(
                "{network} epoch {}/{} train {:.6} val {:.6} lr {:e} ({:.1}s)",
                r.epoch,
                self.max_epochs,
                r.train_loss,
                r.validation_loss,
                r.learning_rate,
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

/// Training frames: the explicit range, else every annotated frame after
/// the background interval (CD2014) or every annotated frame (Petrobras).
pub fn training_frames(
    video: &VideoDir,
    source: BackgroundSource,
    range: Option<FrameRange>,
) -> Result<Vec<u32>> {
    let numbers = match range {
        Some(r) => video.select(r, true)?,
        None => {
            let skip = match source {
                BackgroundSource::Cd2014 { first_n } => {
                    video.frame_numbers().get(first_n - 1).copied()
                }
                BackgroundSource::Petrobras => None,
            };
            video
                .annotated_numbers()
                .into_iter()
                .filter(|&n| skip.map_or(true, |s| n > s))
                .collect()
        }
    };
    if numbers.is_empty() {
        return Err(CliError::data(format!(
            "{}: no annotated training frames",
            video.root.display()
        )));
    }
    Ok(numbers)
}

fn resume_pair(path: &Path) -> Result<(Checkpoint, TrainReport)> {
    let ck = load_checkpoint(path, Some(NetworkName::Bcnn))?;
    let report_path = path.with_file_name(REPORT_FILE);
    let report = match std::fs::read(&report_path) {
        Ok(bytes) => {
            let run: TrainRunReport = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::data(format!("{}: {e}", report_path.display())))?;
            run.bcnn
        }
        Err(_) => TrainReport {
            network: NetworkName::Bcnn,
            parameters: ck.network.count_parameters(),
            train_patches: 0,
            validation_patches: 0,
            batch_sizes: Vec::new(),
            initial_validation_loss: ck.metadata.final_loss,
            epochs: Vec::new(),
            lr_events: Vec::new(),
            epochs_run: ck.metadata.epochs_run,
            stopped_early: false,
            wall_seconds: 0.0,
            checkpoint_path: Some(path.display().to_string()),
        },
    };
    Ok((ck, report))
}

/// Background, both training phases, two checkpoints and `report.json`.
pub fn train(req: TrainRequest<'_>, observer: &mut dyn TrainObserver) -> Result<TrainRunReport> {
    req.config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let start = Instant::now();
    let background = match req.source {
        BackgroundSource::Cd2014 { first_n } => median_background(req.video, first_n)?,
        BackgroundSource::Petrobras => {
            DeterministicBackground::from_frame(&read_frame(&req.video.background_path())?)
        }
    };
    let numbers = training_frames(req.video, req.source, req.frames)?;
    let inputs = CascadeInputs {
        frames: req.video.load_inputs(&numbers)?,
        masks: req.video.load_ground_truth(&numbers)?,
        background,
    };
    let resume = req.resume_bcnn.as_deref().map(resume_pair).transpose()?;
    let mut out = train_cascade(&inputs, &req.config, resume, observer)?;

    let bcnn_path = req.out.join(BCNN_FILE);
    let scnn_path = req.out.join(SCNN_FILE);
    save_checkpoint(&bcnn_path, &out.bcnn)?;
    save_checkpoint(&scnn_path, &out.scnn)?;
    out.bcnn_report.checkpoint_path = Some(BCNN_FILE.into());
    out.scnn_report.checkpoint_path = Some(SCNN_FILE.into());
    if !req.record_time {
        out.bcnn_report.wall_seconds = 0.0;
        out.scnn_report.wall_seconds = 0.0;
    }
    let bcnn = out.bcnn.network.count_parameters();
    let scnn = out.scnn.network.count_parameters();
    let report = TrainRunReport {
        dataset: req.video.root.display().to_string(),
        background: req.source,
        training_frames: numbers,
        dataset_mean: out.dataset_mean,
        parameters: ParameterCounts {
            bcnn,
            scnn,
            total: bcnn + scnn,
        },
        config: req.config,
        bcnn: out.bcnn_report,
        scnn: out.scnn_report,
        wall_seconds: if req.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    write_json(&req.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Loads `bcnn.ckpt` and `scnn.ckpt` from one directory.
pub fn load_model_dir(dir: &Path) -> Result<CascadeModel> {
    load_model(&dir.join(BCNN_FILE), &dir.join(SCNN_FILE))
}

pub fn load_model(bcnn: &Path, scnn: &Path) -> Result<CascadeModel> {
    let b = load_checkpoint(bcnn, Some(NetworkName::Bcnn))?;
    let s = load_checkpoint(scnn, Some(NetworkName::Scnn))?;
    Ok(CascadeModel::from_checkpoints(b, s)?)
}

/// Binary masks for `frames`, spread over at most `threads` workers.
/// Results do not depend on the worker count.
pub fn segment_frames(
    model: &CascadeModel,
    frames: &[Frame],
    threshold: f64,
    mode: InferenceMode,
    threads: usize,
) -> Result<Vec<BinaryMask>> {
    let threads = threads.clamp(1, frames.len().max(1));
    if threads == 1 {
        return frames
            .iter()
            .map(|f| Ok(model.segment(f, threshold, mode)?))
            .collect();
    }
    let chunk = frames.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = frames
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|f| model.segment(f, threshold, mode))
                        .collect::<crcnn_core::Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(frames.len());
        for h in handles {
            out.extend(h.join().expect("segmentation worker panicked")?);
        }
        Ok(out)
    })
}

pub fn mask_name(number: u32, extension: &str) -> String {
    format!("bin{number:06}.{extension}")
}

/// Segments the chosen frames of a video and writes `bin%06d.<ext>` masks
/// (0 background, 255 foreground). Returns the written paths.
pub fn segment_video(
    model: &CascadeModel,
    video: &VideoDir,
    numbers: &[u32],
    threshold: f64,
    mode: InferenceMode,
    threads: usize,
    out: &Path,
    extension: &str,
) -> Result<Vec<PathBuf>> {
    check_threshold(threshold)?;
    let mut written = Vec::with_capacity(numbers.len());
    // bounded batches keep memory flat on long videos
    for part in numbers.chunks(64) {
        let frames = video.load_inputs(part)?;
        let masks = segment_frames(model, &frames, threshold, mode, threads)?;
        for (&n, m) in part.iter().zip(&masks) {
            let path = out.join(mask_name(n, extension));
            write_frame(&path, &m.to_frame())?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub number: u32,
    pub counts: ConfusionReport,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub category: String,
    pub video: String,
    pub frames: Vec<FrameScore>,
    pub pooled: ConfusionReport,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub threshold: f64,
    pub labels: LabelMode,
    pub inference: InferenceMode,
    pub videos: Vec<VideoScore>,
    pub summary: SummaryTable,
}

/// One video to score and the model that segments it.
pub struct EvalJob {
    pub category: String,
    pub video: VideoDir,
    pub model: CascadeModel,
    pub frames: Vec<u32>,
}

pub struct EvalSettings {
    pub method: String,
    pub threshold: f64,
    pub labels: LabelMode,
    pub inference: InferenceMode,
    pub threads: usize,
    /// Also write the predicted masks under `<out>/masks/<category>/<video>`.
    pub save_masks: bool,
}

/// Scores every job, writes `report.json` and `summary.csv` into `out`.
pub fn evaluate(
    jobs: Vec<EvalJob>,
    settings: &EvalSettings,
    out: &Path,
) -> Result<EvaluationReport> {
    check_threshold(settings.threshold)?;
    let mut videos = Vec::with_capacity(jobs.len());
    for job in jobs {
        let mut preds = Vec::with_capacity(job.frames.len());
        let mut gts = Vec::with_capacity(job.frames.len());
        for part in job.frames.chunks(64) {
            let frames = job.video.load_inputs(part)?;
            let masks = segment_frames(
                &job.model,
                &frames,
                settings.threshold,
                settings.inference,
                settings.threads,
            )?;
            for (&n, (m, f)) in part.iter().zip(masks.into_iter().zip(&frames)) {
                let path = job.video.ground_truth_path(n)?;
                let gt_frame = read_frame(path)?;
                if !gt_frame.same_dims(f) {
                    return Err(CliError::data(format!(
                        "{}: {}x{} ground truth for a {}x{} frame",
                        path.display(),
                        gt_frame.width(),
                        gt_frame.height(),
                        f.width(),
                        f.height()
                    )));
                }
                let gt = GroundTruthMask::from_frame(&gt_frame, settings.labels)
                    .map_err(|e| CliError::from(e).at(path))?;
                if settings.save_masks {
                    let dir = out.join("masks").join(&job.category).join(job.video.name());
                    write_frame(&dir.join(mask_name(n, "png")), &m.to_frame())?;
                }
                preds.push(m);
                gts.push(gt);
            }
        }
        let ev = evaluate_predictions(&preds, &gts)?;
        videos.push(VideoScore {
            category: job.category,
            video: job.video.name(),
            frames: ev
                .frames
                .into_iter()
                .map(|f| FrameScore {
                    number: job.frames[f.index],
                    counts: f.counts,
                    metrics: f.metrics,
                })
                .collect(),
            pooled: ev.pooled,
            metrics: ev.metrics,
        });
    }
    let results: Vec<VideoResult> = videos
        .iter()
        .map(|v| VideoResult {
            category: v.category.clone(),
            video: v.video.clone(),
            metrics: v.metrics,
        })
        .collect();
    let summary = aggregate(&settings.method, &results)?;
    let report = EvaluationReport {
        method: settings.method.clone(),
        threshold: settings.threshold,
        labels: settings.labels,
        inference: settings.inference,
        videos,
        summary,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_atomic(
        &out.join(SUMMARY_FILE),
        summary_csv(std::slice::from_ref(&report.summary)).as_bytes(),
    )?;
    Ok(report)
}

pub fn canonical_parameter_counts() -> ParameterCounts {
    let bcnn = crcnn_core::model::build_bcnn(0).count_parameters();
    let scnn = crcnn_core::model::build_scnn(0).count_parameters();
    debug_assert_eq!(bcnn + scnn, PUBLISHED_PARAMETER_TOTAL);
    ParameterCounts {
        bcnn,
        scnn,
        total: bcnn + scnn,
    }
}
