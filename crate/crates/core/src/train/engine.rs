use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::schedule::{LrEvent, PlateauSchedule, ScheduleAction};
use crate::adam::AdamState;
use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::data::{self, DeterministicBackground, Frame, NormalizedFrame, PatchSet};
use crate::error::{Error, Result};
use crate::loss;
use crate::model::{self, build_network, Network, NetworkName};
use crate::ops::{self, Mode};
use crate::tensor::Tensor4;

/// Aligned network inputs and targets, one patch per batch item.
#[derive(Debug, Clone)]
pub struct PatchData {
    pub inputs: Tensor4<f32>,
    pub targets: Tensor4<f32>,
}

impl PatchData {
    pub fn len(&self) -> usize {
        self.inputs.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub network: NetworkName,
    pub parameters: usize,
    pub train_patches: usize,
    pub validation_patches: usize,
    /// Batch sizes of the first epoch.
    pub batch_sizes: Vec<usize>,
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub lr_events: Vec<LrEvent>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub wall_seconds: f64,
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    pub fn final_validation_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_validation_loss, |e| e.validation_loss)
    }
}

/// Progress hooks. The core has no clock; callers time epochs here.
pub trait TrainObserver {
    fn on_phase_start(&mut self, _network: NetworkName, _patches: usize) {}
    fn on_epoch(&mut self, _network: NetworkName, _record: &EpochRecord) {}
}

pub struct NullObserver;

impl TrainObserver for NullObserver {}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub optimizer: AdamState<f32>,
    pub report: TrainReport,
}

fn patchify(image: &Tensor4<f32>, config: &TrainConfig) -> Result<PatchSet<f32>> {
    data::extract_patches(image, config.patch_size, config.overlap)
}

/// BCNN pairs: patches of each centered frame against the background patch
/// cut at the same place.
pub fn prepare_bcnn_data(
    frames: &[NormalizedFrame],
    background: &DeterministicBackground,
    config: &TrainConfig,
) -> Result<PatchData> {
    if frames.is_empty() {
        return Err(Error::Empty("train_bcnn: no training frames"));
    }
    let mut inputs = Vec::with_capacity(frames.len());
    let mut targets = Vec::with_capacity(frames.len());
    for f in frames {
        let set = patchify(&f.tensor, config)?;
        targets.push(data::replicate_background_patches(background, &set)?);
        inputs.push(set);
    }
    Ok(PatchData {
        inputs: PatchSet::concat(&inputs)?.patches,
        targets: PatchSet::concat(&targets)?.patches,
    })
}

/// SCNN pairs: patches of `[f, BCNN(f)]` against binary mask patches. The
/// residual map is computed once per full frame with the frozen BCNN.
pub fn prepare_scnn_data(
    frames: &[NormalizedFrame],
    masks: &[Tensor4<f32>],
    bcnn: &Network<f32>,
    config: &TrainConfig,
) -> Result<PatchData> {
    if frames.is_empty() {
        return Err(Error::Empty("train_scnn: no training frames"));
    }
    if frames.len() != masks.len() {
        return Err(Error::invalid(alloc::format!(
            "{} frames but {} masks",
            frames.len(),
            masks.len()
        )));
    }
    let mut inputs = Vec::with_capacity(frames.len());
    let mut targets = Vec::with_capacity(frames.len());
    for (i, (f, g)) in frames.iter().zip(masks).enumerate() {
        if g.shape() != f.tensor.shape() {
            return Err(Error::invalid(alloc::format!(
                "mask {i} is {}, frame is {}",
                g.shape(),
                f.tensor.shape()
            )));
        }
        let r = model::bcnn_forward(&f.tensor, bcnn, Mode::Infer)?;
        let c = model::cascade_input(&f.tensor, &r)?;
        inputs.push(patchify(&c, config)?);
        targets.push(patchify(g, config)?);
    }
    Ok(PatchData {
        inputs: PatchSet::concat(&inputs)?.patches,
        targets: PatchSet::concat(&targets)?.patches,
    })
}

/// Loss and the gradient that seeds the backward pass: with respect to the
/// BCNN output, or to the SCNN logits (sigmoid and cross-entropy fused).
fn objective(
    phase: NetworkName,
    inputs: &Tensor4<f32>,
    output: &Tensor4<f32>,
    targets: &Tensor4<f32>,
) -> Result<(f64, Tensor4<f32>)> {
    match phase {
        NetworkName::Bcnn => {
            // a = sigmoid(f - r)
            let a = inputs.zip_map(output, "approximated_background", |f, r| {
                ops::sigmoid_scalar(f - r)
            })?;
            let (l, grad_a) = loss::frobenius_loss(targets, &a)?;
            let grad_r = grad_a.zip_map(&a, "bcnn objective", |g, a| -g * a * (1.0 - a))?;
            Ok((l, grad_r))
        }
        NetworkName::Scnn => loss::bce_logit_loss(targets, output),
    }
}

fn loss_only(
    phase: NetworkName,
    inputs: &Tensor4<f32>,
    output: &Tensor4<f32>,
    targets: &Tensor4<f32>,
) -> Result<f64> {
    objective(phase, inputs, output, targets).map(|(l, _)| l)
}

fn validation_loss(
    net: &Network<f32>,
    data: &PatchData,
    batches: &[Vec<usize>],
    phase: NetworkName,
) -> Result<f64> {
    let mut weighted = 0.0;
    let mut count = 0usize;
    for b in batches {
        let x = data.inputs.gather(b);
        let t = data.targets.gather(b);
        let y = net.forward(&x, Mode::Infer)?;
        weighted += loss_only(phase, &x, &y, &t)? * b.len() as f64;
        count += b.len();
    }
    Ok(weighted / count as f64)
}

/// Adam with plateau decay on patch pairs. The network's own forward mode
/// is `Train` for updates and `Infer` for the held-out loss. After every
/// epoch the batch-norm running statistics are re-estimated over the
/// training patches with the new weights, so the held-out loss (and the
/// saved checkpoint) sees the statistics inference will use.
fn fit(
    mut net: Network<f32>,
    data: &PatchData,
    config: &TrainConfig,
    split_seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let phase = net.name();
    let split = data::split_and_batch(
        data.len(),
        config.train_fraction,
        config.batch_size,
        split_seed,
    )?;
    let monitor_train = split.validation.is_empty();
    let val_batches = split.validation_batches();
    observer.on_phase_start(phase, data.len());

    let mut adam = AdamState::<f32>::new(config.learning_rate, net.parameter_lengths());
    let mut schedule = PlateauSchedule::new(
        config.learning_rate,
        config.plateau_factor,
        config.plateau_patience,
        config.early_stop_delta,
        config.min_learning_rate,
    );
    let recalibrate = |net: &mut Network<f32>, epoch: usize| -> Result<()> {
        if net.has_batchnorm() {
            let batches = split.epoch_batches(epoch);
            net.recalibrate_batchnorm(batches.iter().map(|b| data.inputs.gather(b)))?;
        }
        Ok(())
    };
    recalibrate(&mut net, 0)?;
    let initial = if monitor_train {
        validation_loss(&net, data, &split.epoch_batches(0), phase)?
    } else {
        validation_loss(&net, data, &val_batches, phase)?
    };
    let mut report = TrainReport {
        network: phase,
        parameters: net.count_parameters(),
        train_patches: split.train.len(),
        validation_patches: split.validation.len(),
        batch_sizes: split.epoch_batches(0).iter().map(Vec::len).collect(),
        initial_validation_loss: initial,
        epochs: Vec::new(),
        lr_events: Vec::new(),
        epochs_run: 0,
        stopped_early: false,
        wall_seconds: 0.0,
        checkpoint_path: None,
    };

    for epoch in 0..config.max_epochs {
        let lr = schedule.learning_rate();
        adam.learning_rate = lr;
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in split.epoch_batches(epoch).iter().enumerate() {
            let x = data.inputs.gather(batch);
            let t = data.targets.gather(batch);
            let (y, tape) = net.forward_tape(&x, Mode::Train)?;
            let (l, grad_y) = objective(phase, &x, &y, &t)?;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    phase: phase.as_str(),
                    epoch: epoch + 1,
                    batch: bi + 1,
                });
            }
            drop(y);
            let (_, grads) = match phase {
                NetworkName::Bcnn => net.backward(tape, grad_y, false)?,
                NetworkName::Scnn => net.backward_logits(tape, grad_y, false)?,
            };
            adam.step(&mut net.parameters_mut(), &grads)?;
            weighted += l * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = weighted / seen as f64;
        recalibrate(&mut net, epoch)?;
        let val = if monitor_train {
            train_loss
        } else {
            validation_loss(&net, data, &val_batches, phase)?
        };
        if !val.is_finite() {
            return Err(Error::Divergence {
                phase: phase.as_str(),
                epoch: epoch + 1,
                batch: 0,
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss,
            validation_loss: val,
            learning_rate: lr,
        };
        observer.on_epoch(phase, &record);
        report.epochs.push(record);
        report.epochs_run = epoch + 1;
        match schedule.observe(val) {
            ScheduleAction::Continue => {}
            ScheduleAction::Reduce => report.lr_events.push(LrEvent {
                epoch: epoch + 1,
                from: lr,
                to: schedule.learning_rate(),
            }),
            ScheduleAction::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    adam.learning_rate = schedule.learning_rate();
    Ok(TrainOutcome {
        network: net,
        optimizer: adam,
        report,
    })
}

/// Trains a fresh BCNN so that `sigmoid(f - BCNN(f))` matches the
/// deterministic background on every training patch.
pub fn train_bcnn(
    frames: &[NormalizedFrame],
    background: &DeterministicBackground,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = prepare_bcnn_data(frames, background, config)?;
    let net = build_network(NetworkName::Bcnn, config.architecture, config.phase_seed(0));
    fit(net, &data, config, config.phase_seed(1), observer)
}

/// Trains a fresh SCNN on binary masks. `bcnn` is only read.
pub fn train_scnn(
    frames: &[NormalizedFrame],
    masks: &[Tensor4<f32>],
    bcnn: &Network<f32>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some((i, _)) = masks
        .iter()
        .enumerate()
        .find(|(_, m)| m.data().iter().any(|&v| v != 0.0 && v != 1.0))
    {
        return Err(Error::invalid(alloc::format!("mask {i} is not binary")));
    }
    let data = prepare_scnn_data(frames, masks, bcnn, config)?;
    let net = build_network(NetworkName::Scnn, config.architecture, config.phase_seed(2));
    fit(net, &data, config, config.phase_seed(3), observer)
}

/// Everything one training run consumes.
#[derive(Debug, Clone)]
pub struct CascadeInputs {
    /// Annotated training frames.
    pub frames: Vec<Frame>,
    /// Ground-truth masks; values `>= 128` are foreground.
    pub masks: Vec<Frame>,
    pub background: DeterministicBackground,
}

pub struct CascadeOutcome {
    pub bcnn: Checkpoint,
    pub scnn: Checkpoint,
    pub bcnn_report: TrainReport,
    pub scnn_report: TrainReport,
    pub dataset_mean: f64,
}

/// Binary `{0, 1}` target of a ground-truth image.
pub fn mask_target(mask: &Frame) -> Tensor4<f32> {
    let data = mask
        .pixels()
        .iter()
        .map(|&v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();
    Tensor4::from_vec(crate::Shape4::new(1, 1, mask.height(), mask.width()), data)
        .expect("frame is non-empty")
}

/// BCNN phase then SCNN phase. A BCNN checkpoint passed in `resume_bcnn`
/// replaces the first phase.
pub fn train_cascade(
    inputs: &CascadeInputs,
    config: &TrainConfig,
    resume_bcnn: Option<(Checkpoint, TrainReport)>,
    observer: &mut dyn TrainObserver,
) -> Result<CascadeOutcome> {
    config.validate()?;
    if inputs.frames.is_empty() {
        return Err(Error::Empty("train_cascade: no annotated training frames"));
    }
    if inputs.frames.len() != inputs.masks.len() {
        return Err(Error::invalid(alloc::format!(
            "{} training frames but {} ground-truth masks",
            inputs.frames.len(),
            inputs.masks.len()
        )));
    }
    for (i, (f, m)) in inputs.frames.iter().zip(&inputs.masks).enumerate() {
        if !f.same_dims(m) {
            return Err(Error::invalid(alloc::format!(
                "frame {i} and its mask differ in size"
            )));
        }
    }
    let (bcnn_ck, bcnn_report) = match resume_bcnn {
        Some(pair) => pair,
        None => {
            let mean = data::dataset_mean(&inputs.frames)?;
            let normalized = normalize_all(&inputs.frames, mean)?;
            let out = train_bcnn(&normalized, &inputs.background, config, observer)?;
            let ck = Checkpoint {
                network: out.network,
                optimizer: Some(out.optimizer),
                metadata: TrainingMetadata {
                    epochs_run: out.report.epochs_run,
                    final_loss: out.report.final_validation_loss(),
                    seed: config.seed,
                    dataset_mean: mean,
                    threshold: config.threshold,
                },
            };
            (ck, out.report)
        }
    };
    let mean = bcnn_ck.metadata.dataset_mean;
    let normalized = normalize_all(&inputs.frames, mean)?;
    let masks: Vec<Tensor4<f32>> = inputs.masks.iter().map(mask_target).collect();
    let out = train_scnn(&normalized, &masks, &bcnn_ck.network, config, observer)?;
    let scnn_ck = Checkpoint {
        network: out.network,
        optimizer: Some(out.optimizer),
        metadata: TrainingMetadata {
            epochs_run: out.report.epochs_run,
            final_loss: out.report.final_validation_loss(),
            seed: config.seed,
            dataset_mean: mean,
            threshold: config.threshold,
        },
    };
    Ok(CascadeOutcome {
        bcnn: bcnn_ck,
        scnn: scnn_ck,
        bcnn_report,
        scnn_report: out.report,
        dataset_mean: mean,
    })
}

fn normalize_all(frames: &[Frame], mean: f64) -> Result<Vec<NormalizedFrame>> {
    frames.iter().map(|f| data::normalize(f, mean)).collect()
}
