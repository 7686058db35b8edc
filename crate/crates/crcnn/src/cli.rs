//! Argument parsing and subcommand dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crcnn_core::eval::{InferenceMode, LabelMode};
use crcnn_core::gradcheck::{self, GradCheckConfig};
use crcnn_core::model::{self, LayerKind, NetworkName};
use crcnn_core::synth::{self, BackgroundKind, SceneConfig};
use crcnn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::config::{overlay, ConfigFile};
use crate::dataset::{discover_videos, FrameRange, VideoDir};
use crate::error::{CliError, Result};
use crate::io::write_frame;
use crate::pipeline::{
    self, BackgroundSource, EpochLog, EvalJob, EvalSettings, TrainRequest, BCNN_FILE,
};
use crate::scene::write_cd2014_layout;

pub const DATA_ROOT_ENV: &str = "CRCNN_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "crcnn",
    version,
    about = "Cascade residual CNN foreground segmentation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for weight initialization, patch splits and synthetic scenes
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file whose values override the flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub threads: usize,
    /// Single-threaded, timing-free runs with byte-identical artifacts
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Suppress per-epoch progress lines
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene in the CD2014 layout
    Synth(SynthArgs),
    /// Median background of the first frames of a video
    Background(BackgroundArgs),
    /// Train the BCNN and then the SCNN on one video
    Train(TrainArgs),
    /// Write binary foreground masks for the frames of a video
    Segment(SegmentArgs),
    /// Score trained models against ground truth
    Evaluate(EvaluateArgs),
    /// Print trainable parameter counts
    Params(ParamsArgs),
    /// Compare analytic and finite-difference gradients in 64-bit
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenePreset {
    /// Empty textured 64x64 scene
    Default,
    /// 120-frame scene with one moving 10x10 square
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    Static,
    Textured,
    Noise,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Starting scene
    #[arg(long, value_enum, default_value_t = ScenePreset::Fixture)]
    pub preset: ScenePreset,
    /// Number of frames
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub width: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub height: Option<usize>,
    /// Background model
    #[arg(long, value_enum)]
    pub background: Option<BackgroundArg>,
    /// Temporal noise standard deviation in gray levels (noise background)
    #[arg(long, default_value_t = 8.0, value_name = "SIGMA")]
    pub noise_sigma: f64,
    /// Gray level of the static background
    #[arg(long, default_value_t = 100)]
    pub level: u8,
    /// Maximum background shift per axis, in pixels
    #[arg(long, value_name = "PX")]
    pub jitter: Option<usize>,
    /// Gray levels added to the background per frame
    #[arg(long)]
    pub drift: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BackgroundArgs {
    /// Video directory (contains input/)
    #[arg(long, env = DATA_ROOT_ENV, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Number of leading frames in the median
    #[arg(long, default_value_t = 100, value_name = "N")]
    pub first_n: usize,
    /// Output image [default: <dataset>/background.pgm]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    /// Background from the median of the first frames
    Cd2014,
    /// Background read from <dataset>/background.pgm
    Petrobras,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Video directory (contains input/ and groundtruth/)
    #[arg(long, env = DATA_ROOT_ENV, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory for checkpoints and report.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Background source
    #[arg(long, value_enum, default_value_t = SourceArg::Cd2014)]
    pub source: SourceArg,
    /// Leading frames in the median background (cd2014 source)
    #[arg(long, default_value_t = 100, value_name = "N")]
    pub first_n: usize,
    /// Annotated training frames, 1-based inclusive [default: every
    /// annotated frame after the background interval]
    #[arg(long, value_name = "FIRST:LAST")]
    pub frames: Option<FrameRange>,
    /// Square patch side
    #[arg(long, default_value_t = 48, value_name = "PX")]
    pub patch_size: usize,
    /// Fraction shared by neighbouring patches, within [0.5, 0.75]
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Epoch budget per network
    #[arg(long, default_value_t = 50, value_name = "N")]
    pub epochs: usize,
    #[arg(long, default_value_t = 128, value_name = "N")]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3, value_name = "LR")]
    pub learning_rate: f64,
    /// Binarization threshold stored with the checkpoints
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Reuse a trained BCNN checkpoint and train only the SCNN
    #[arg(long, value_name = "FILE")]
    pub resume_bcnn: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Directory holding bcnn.ckpt and scnn.ckpt (for a dataset tree:
    /// <models>/<category>/<video>/, falling back to <models>/)
    #[arg(long, value_name = "DIR", conflicts_with_all = ["bcnn", "scnn"])]
    pub models: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "scnn")]
    pub bcnn: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "bcnn")]
    pub scnn: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// Segment overlapping patches of this side instead of whole frames
    #[arg(long, value_name = "PX")]
    pub patch_inference: Option<usize>,
    /// Overlap of inference patches
    #[arg(long, default_value_t = 0.5)]
    pub patch_overlap: f64,
    /// Patches per forward pass in patch inference
    #[arg(long, default_value_t = 16, value_name = "N")]
    pub patch_batch: usize,
}

/// Options the `[segment]` and `[evaluate]` config sections may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceOptions {
    pub threshold: f64,
    pub inference: InferenceMode,
}

impl InferenceArgs {
    fn mode(&self) -> Result<InferenceMode> {
        match self.patch_inference {
            None => Ok(InferenceMode::FullFrame),
            Some(p) => {
                if p == 0 || !(0.5..=0.75).contains(&self.patch_overlap) || self.patch_batch == 0 {
                    return Err(CliError::usage(
                        "patch inference needs a positive size and batch, overlap in [0.5, 0.75]",
                    ));
                }
                Ok(InferenceMode::Patched {
                    patch_size: p,
                    overlap: self.patch_overlap,
                    batch: self.patch_batch,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Video directory (contains input/) or a plain directory of frames
    #[arg(long, env = DATA_ROOT_ENV, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory for bin%06d masks
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Foreground when probability >= threshold
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Frames to segment, 1-based inclusive [default: all]
    #[arg(long, value_name = "FIRST:LAST")]
    pub frames: Option<FrameRange>,
    /// Mask file format
    #[arg(long, value_enum, default_value_t = MaskFormat::Png)]
    pub format: MaskFormat,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    /// 0/50 background, 85/170 unscored, 255 foreground
    Cd2014,
    /// 0 background, 255 foreground
    Binary,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Video directory or <category>/<video> tree
    #[arg(long, env = DATA_ROOT_ENV, value_name = "DIR", required_unless_present = "inputs")]
    pub dataset: Option<PathBuf>,
    /// Plain directory of numbered frames (instead of --dataset)
    #[arg(
        long,
        value_name = "DIR",
        requires = "groundtruth",
        conflicts_with = "dataset"
    )]
    pub inputs: Option<PathBuf>,
    /// Plain directory of numbered ground-truth masks
    #[arg(long, value_name = "DIR", requires = "inputs")]
    pub groundtruth: Option<PathBuf>,
    /// Output directory for report.json and summary.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Foreground when probability >= threshold
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Scored frames, 1-based inclusive [default: temporalROI.txt, else
    /// every annotated frame]
    #[arg(long, value_name = "FIRST:LAST")]
    pub frames: Option<FrameRange>,
    /// Ground-truth label convention
    #[arg(long, value_enum, default_value_t = LabelArg::Cd2014)]
    pub labels: LabelArg,
    /// Method name in the summary table
    #[arg(long, default_value = "CRCNN")]
    pub method: String,
    /// Also write the predicted masks under <out>/masks/
    #[arg(long)]
    pub save_masks: bool,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Also print the layer tables
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Height and width of the test inputs
    #[arg(long, default_value_t = 6, value_name = "PX")]
    pub spatial: usize,
    /// Batch size of the test inputs
    #[arg(long, default_value_t = 2, value_name = "N")]
    pub batch: usize,
    /// Checked coordinates per tensor
    #[arg(long, default_value_t = 48, value_name = "N")]
    pub samples: usize,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Parsed flags merged with the config file.
struct Context {
    seed: u64,
    threads: usize,
    deterministic: bool,
    quiet: bool,
    file: ConfigFile,
}

impl Context {
    fn new(g: &GlobalArgs) -> Result<Self> {
        let file = match &g.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let deterministic = file.deterministic.unwrap_or(g.deterministic);
        let threads = file.threads.unwrap_or(g.threads);
        if threads == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        Ok(Self {
            seed: file.seed.unwrap_or(g.seed),
            threads: if deterministic { 1 } else { threads },
            deterministic,
            quiet: g.quiet,
            file,
        })
    }
}

/// Runs a parsed invocation; stdout carries the result summary.
pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli.global)?;
    match cli.command {
        Command::Synth(a) => synth_cmd(&ctx, a),
        Command::Background(a) => background_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Segment(a) => segment_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Params(a) => params_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(&ctx, a),
    }
}

fn synth_cmd(ctx: &Context, a: SynthArgs) -> Result<()> {
    let mut scene = match a.preset {
        ScenePreset::Default => SceneConfig::default(),
        ScenePreset::Fixture => SceneConfig::acceptance_fixture(ctx.seed),
    };
    scene.seed = ctx.seed;
    if let Some(n) = a.frames {
        scene.frame_count = n;
    }
    if let Some(w) = a.width {
        scene.width = w;
    }
    if let Some(h) = a.height {
        scene.height = h;
    }
    if let Some(b) = a.background {
        scene.background = match b {
            BackgroundArg::Static => BackgroundKind::Static { level: a.level },
            BackgroundArg::Textured => BackgroundKind::Textured,
            BackgroundArg::Noise => BackgroundKind::DynamicNoise {
                sigma: a.noise_sigma,
            },
        };
    }
    if let Some(j) = a.jitter {
        scene.jitter_amplitude = j;
    }
    if let Some(d) = a.drift {
        scene.illumination_drift = d;
    }
    let scene = overlay(&scene, ctx.file.synth.as_ref(), "synth")?;
    scene
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let sequence = synth::generate(&scene)?;
    let manifest = write_cd2014_layout(&sequence, &scene, &a.out)?;
    println!(
        "wrote {} frames to {}",
        manifest.frames.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundOptions {
    first_n: usize,
}

fn background_cmd(ctx: &Context, a: BackgroundArgs) -> Result<()> {
    let opts = overlay(
        &BackgroundOptions { first_n: a.first_n },
        ctx.file.background.as_ref(),
        "background",
    )?;
    let video = VideoDir::open(&a.dataset)?;
    let bg = pipeline::median_background(&video, opts.first_n)?;
    let out = a.out.unwrap_or_else(|| video.background_path());
    write_frame(&out, &bg.to_frame())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn train_cmd(ctx: &Context, a: TrainArgs) -> Result<()> {
    let flags = TrainConfig {
        learning_rate: a.learning_rate,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        seed: ctx.seed,
        patch_size: a.patch_size,
        overlap: a.overlap,
        threshold: a.threshold,
        ..TrainConfig::default()
    };
    let config = overlay(&flags, ctx.file.train.as_ref(), "train")?;
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let source = match a.source {
        SourceArg::Cd2014 => BackgroundSource::Cd2014 { first_n: a.first_n },
        SourceArg::Petrobras => BackgroundSource::Petrobras,
    };
    if let BackgroundSource::Cd2014 { first_n: 0 } = source {
        return Err(CliError::usage("--first-n must be at least 1"));
    }
    let video = VideoDir::open(&a.dataset)?;
    let mut log = EpochLog::new(config.max_epochs, ctx.quiet);
    // batch items of each convolution are split over the workers; results
    // do not depend on the worker count
    crcnn_core::ops::set_threads(ctx.threads);
    let report = pipeline::train(
        TrainRequest {
            video: &video,
            source,
            frames: a.frames,
            config,
            resume_bcnn: a.resume_bcnn,
            out: &a.out,
            record_time: !ctx.deterministic,
        },
        &mut log,
    )?;
    println!(
        "bcnn {} epochs (val {:.6}), scnn {} epochs (val {:.6}); wrote {}",
        report.bcnn.epochs_run,
        report.bcnn.final_validation_loss(),
        report.scnn.epochs_run,
        report.scnn.final_validation_loss(),
        a.out.display()
    );
    Ok(())
}

fn model_for(
    m: &ModelArgs,
    category: &str,
    video: &VideoDir,
) -> Result<crcnn_core::eval::CascadeModel> {
    match (&m.models, &m.bcnn, &m.scnn) {
        (Some(dir), _, _) => {
            let specific = dir.join(category).join(video.name());
            if specific.join(BCNN_FILE).is_file() {
                pipeline::load_model_dir(&specific)
            } else {
                pipeline::load_model_dir(dir)
            }
        }
        (None, Some(b), Some(s)) => pipeline::load_model(b, s),
        _ => Err(CliError::usage(
            "give --models DIR or both --bcnn and --scnn",
        )),
    }
}

fn inference_options(
    a: &InferenceArgs,
    threshold: f64,
    table: Option<&toml::Table>,
    section: &str,
) -> Result<InferenceOptions> {
    let opts = overlay(
        &InferenceOptions {
            threshold,
            inference: a.mode()?,
        },
        table,
        section,
    )?;
    pipeline::check_threshold(opts.threshold)?;
    Ok(opts)
}

fn open_any(dir: &Path) -> Result<VideoDir> {
    if dir.join(crate::dataset::INPUT_DIR).is_dir() {
        VideoDir::open(dir)
    } else {
        VideoDir::flat(dir, None)
    }
}

fn segment_cmd(ctx: &Context, a: SegmentArgs) -> Result<()> {
    let opts = inference_options(
        &a.inference,
        a.threshold,
        ctx.file.segment.as_ref(),
        "segment",
    )?;
    let video = open_any(&a.dataset)?;
    let model = model_for(&a.model, &video.category(), &video)?;
    let numbers = match a.frames {
        Some(r) => video.select(r, false)?,
        None => video.frame_numbers(),
    };
    let ext = match a.format {
        MaskFormat::Png => "png",
        MaskFormat::Pgm => "pgm",
    };
    let written = pipeline::segment_video(
        &model,
        &video,
        &numbers,
        opts.threshold,
        opts.inference,
        ctx.threads,
        &a.out,
        ext,
    )?;
    println!("wrote {} masks to {}", written.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let opts = inference_options(
        &a.inference,
        a.threshold,
        ctx.file.evaluate.as_ref(),
        "evaluate",
    )?;
    let videos = match (&a.inputs, &a.groundtruth, &a.dataset) {
        (Some(i), Some(g), _) => {
            let v = VideoDir::flat(i, Some(g))?;
            vec![("default".to_string(), v)]
        }
        (_, _, Some(d)) => discover_videos(d)?,
        _ => {
            return Err(CliError::usage(
                "give --dataset or --inputs with --groundtruth",
            ))
        }
    };
    let mut jobs = Vec::with_capacity(videos.len());
    for (category, video) in videos {
        let frames = match a
            .frames
            .map(Ok)
            .or_else(|| video.temporal_roi().transpose())
        {
            Some(r) => video.select(r?, true)?,
            None => video.annotated_numbers(),
        };
        if frames.is_empty() {
            return Err(CliError::data(format!(
                "{}: no annotated frames to score",
                video.root.display()
            )));
        }
        let model = model_for(&a.model, &category, &video)?;
        jobs.push(EvalJob {
            category,
            video,
            model,
            frames,
        });
    }
    let settings = EvalSettings {
        method: a.method,
        threshold: opts.threshold,
        labels: match a.labels {
            LabelArg::Cd2014 => LabelMode::Cd2014,
            LabelArg::Binary => LabelMode::Binary,
        },
        inference: opts.inference,
        threads: ctx.threads,
        save_masks: a.save_masks,
    };
    let report = pipeline::evaluate(jobs, &settings, &a.out)?;
    for v in &report.videos {
        match v.metrics {
            Some(m) => println!(
                "{}/{}: precision {:.4} recall {:.4} f-measure {:.4} pwc {:.4}",
                v.category, v.video, m.precision, m.recall, m.f_measure, m.pwc
            ),
            None => println!("{}/{}: no scored pixels", v.category, v.video),
        }
    }
    println!("overall f-measure {:.4}", report.summary.overall.f_measure);
    Ok(())
}

fn params_cmd(a: ParamsArgs) -> Result<()> {
    let counts = pipeline::canonical_parameter_counts();
    if a.layers {
        for (name, net) in [
            (NetworkName::Bcnn, model::build_bcnn(0)),
            (NetworkName::Scnn, model::build_scnn(0)),
        ] {
            println!("{name}:");
            for (i, (spec, layer)) in net.specs().iter().zip(net.layers()).enumerate() {
                let what = match spec.kind {
                    LayerKind::Conv {
                        in_channels,
                        out_channels,
                    } => format!("conv3x3 {in_channels}->{out_channels}"),
                    LayerKind::BatchNorm { channels, .. } => format!("batchnorm {channels}"),
                    LayerKind::Relu => "relu".into(),
                    LayerKind::Sigmoid => "sigmoid".into(),
                    LayerKind::Linear => "linear".into(),
                };
                println!(
                    "  {i:>2} {:<7} {what:<18} {}",
                    format!("{:?}", spec.color).to_lowercase(),
                    layer.trainable_count()
                );
            }
        }
    }
    println!("bcnn {}", counts.bcnn);
    println!("scnn {}", counts.scnn);
    println!("total {}", counts.total);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckOptions {
    spatial: usize,
    batch: usize,
    samples: usize,
    tolerance: f64,
}

fn gradcheck_cmd(ctx: &Context, a: GradcheckArgs) -> Result<()> {
    let opts = overlay(
        &GradcheckOptions {
            spatial: a.spatial,
            batch: a.batch,
            samples: a.samples,
            tolerance: a.tolerance,
        },
        ctx.file.gradcheck.as_ref(),
        "gradcheck",
    )?;
    if opts.spatial < 2 || opts.batch == 0 || opts.samples == 0 || !(opts.tolerance > 0.0) {
        return Err(CliError::usage(
            "gradcheck needs spatial >= 2, batch >= 1, samples >= 1, tolerance > 0",
        ));
    }
    let cfg = GradCheckConfig {
        seed: ctx.seed,
        spatial: opts.spatial,
        batch: opts.batch,
        samples: opts.samples,
        ..GradCheckConfig::default()
    };
    let report = gradcheck::run(&cfg)?;
    for c in &report.checks {
        println!(
            "{:<28} entries {:>4} skipped {:>3} max rel error {:.3e}",
            c.name, c.entries, c.skipped, c.max_rel_error
        );
    }
    let max = report.max_rel_error();
    println!("max relative error {max:.3e}");
    if report.passed(opts.tolerance) {
        println!("passed (tolerance {:e})", opts.tolerance);
        Ok(())
    } else {
        Err(CliError::Divergence(format!(
            "gradient check failed: max relative error {max:.3e} exceeds {:e}",
            opts.tolerance
        )))
    }
}
