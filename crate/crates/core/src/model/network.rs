use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{ColorTag, Layer, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache, BatchNormParams, ConvParams, Mode};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkName {
    Bcnn,
    Scnn,
}

impl NetworkName {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkName::Bcnn => "bcnn",
            NetworkName::Scnn => "scnn",
        }
    }

    pub fn input_channels(self) -> usize {
        match self {
            NetworkName::Bcnn => 1,
            NetworkName::Scnn => 2,
        }
    }
}

impl fmt::Display for NetworkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Depth and width of the two networks.
///
/// Only [`Architecture::CANONICAL`] reproduces the published parameter
/// count; the other settings exist for small experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub middle_layers: usize,
    pub width: usize,
    /// Put batch norm in the SCNN middle layers as well. Off by default;
    /// enabling it breaks the published parameter total.
    pub scnn_batchnorm: bool,
}

impl Architecture {
    pub const CANONICAL: Architecture = Architecture {
        middle_layers: 15,
        width: 64,
        scnn_batchnorm: false,
    };

    pub fn is_canonical(&self) -> bool {
        *self == Self::CANONICAL
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::CANONICAL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    name: NetworkName,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
}

/// Activations kept by [`Network::forward_tape`] for the backward pass.
pub struct Tape<T> {
    entries: Vec<Saved<T>>,
}

enum Saved<T> {
    Input(Tensor4<T>),
    BatchNorm {
        cache: BatchNormCache<T>,
        mode: Mode,
    },
    Mask(Vec<bool>),
    Output(Tensor4<T>),
    Nothing,
}

pub fn build_bcnn(seed: u64) -> Network<f32> {
    build_network(NetworkName::Bcnn, Architecture::CANONICAL, seed)
}

pub fn build_scnn(seed: u64) -> Network<f32> {
    build_network(NetworkName::Scnn, Architecture::CANONICAL, seed)
}

/// Layer table of a network without allocating parameters.
pub fn layer_specs(name: NetworkName, arch: Architecture) -> Vec<LayerSpec> {
    let spec = |kind, color| LayerSpec { kind, color };
    let conv = |i, o| LayerKind::Conv {
        in_channels: i,
        out_channels: o,
    };
    let bn = |c| LayerKind::BatchNorm {
        channels: c,
        epsilon: ops::batchnorm::DEFAULT_EPSILON,
        momentum: ops::batchnorm::DEFAULT_MOMENTUM,
    };
    let w = arch.width;
    let mut specs = vec![
        spec(conv(name.input_channels(), w), ColorTag::Orange),
        spec(LayerKind::Relu, ColorTag::Orange),
    ];
    let middle_bn = match name {
        NetworkName::Bcnn => true,
        NetworkName::Scnn => arch.scnn_batchnorm,
    };
    for _ in 0..arch.middle_layers {
        if middle_bn {
            specs.push(spec(conv(w, w), ColorTag::Blue));
            specs.push(spec(bn(w), ColorTag::Blue));
            specs.push(spec(LayerKind::Relu, ColorTag::Blue));
        } else {
            // conv + ReLU without batch norm is the orange recipe
            specs.push(spec(conv(w, w), ColorTag::Orange));
            specs.push(spec(LayerKind::Relu, ColorTag::Orange));
        }
    }
    match name {
        NetworkName::Bcnn => {
            specs.push(spec(conv(w, 1), ColorTag::Green));
            specs.push(spec(LayerKind::Linear, ColorTag::Green));
        }
        NetworkName::Scnn => {
            specs.push(spec(conv(w, 1), ColorTag::Yellow));
            specs.push(spec(LayerKind::Sigmoid, ColorTag::Yellow));
        }
    }
    specs
}

/// Builds a network with He fan-in normal kernels, zero biases and unit
/// batch-norm scale, drawn deterministically from `seed`.
pub fn build_network(name: NetworkName, arch: Architecture, seed: u64) -> Network<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = layer_specs(name, arch);
    let layers = specs
        .iter()
        .map(|s| match s.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
            } => Layer::Conv(ConvParams::he_normal(in_channels, out_channels, &mut rng)),
            LayerKind::BatchNorm { channels, .. } => {
                Layer::BatchNorm(BatchNormParams::new(channels))
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Sigmoid => Layer::Sigmoid,
            LayerKind::Linear => Layer::Linear,
        })
        .collect();
    Network {
        name,
        specs,
        layers,
    }
}

impl<T: Scalar> Network<T> {
    /// Assembles a network from explicit layers; each layer must agree with
    /// its spec and consecutive convolutions must chain.
    pub fn from_parts(
        name: NetworkName,
        specs: Vec<LayerSpec>,
        layers: Vec<Layer<T>>,
    ) -> Result<Self> {
        if specs.len() != layers.len() {
            return Err(Error::invalid(
                "layer table and parameter list differ in length",
            ));
        }
        let mut channels = name.input_channels();
        for (i, (s, l)) in specs.iter().zip(&layers).enumerate() {
            if s.kind != l.kind() {
                return Err(Error::invalid(alloc::format!(
                    "layer {i}: declared {:?}, parameters describe {:?}",
                    s.kind,
                    l.kind()
                )));
            }
            match s.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                } => {
                    if in_channels != channels {
                        return Err(Error::invalid(alloc::format!(
                            "layer {i}: conv expects {in_channels} channels, previous layer gives {channels}"
                        )));
                    }
                    channels = out_channels;
                }
                LayerKind::BatchNorm { channels: c, .. } if c != channels => {
                    return Err(Error::invalid(alloc::format!(
                        "layer {i}: batch norm over {c} channels, previous layer gives {channels}"
                    )));
                }
                _ => {}
            }
        }
        if channels != 1 {
            return Err(Error::invalid("network must end in a single channel"));
        }
        Ok(Self {
            name,
            specs,
            layers,
        })
    }

    pub fn name(&self) -> NetworkName {
        self.name
    }

    pub fn input_channels(&self) -> usize {
        self.name.input_channels()
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(Layer::trainable_count).sum()
    }

    /// Lengths of the trainable tensors in optimizer order: for every layer,
    /// conv kernel then bias, or batch-norm gamma then beta.
    pub fn parameter_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(p) => {
                    out.push(p.kernel.data().len());
                    out.push(p.bias.len());
                }
                Layer::BatchNorm(p) => {
                    out.push(p.gamma.len());
                    out.push(p.beta.len());
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(p) => {
                    out.push(p.kernel.data_mut());
                    out.push(&mut p.bias);
                }
                Layer::BatchNorm(p) => {
                    out.push(&mut p.gamma);
                    out.push(&mut p.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(p) => {
                    out.push(p.kernel.data());
                    out.push(&p.bias);
                }
                Layer::BatchNorm(p) => {
                    out.push(&p.gamma);
                    out.push(&p.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            name: self.name,
            specs: self.specs.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    fn check_input(&self, op: &'static str, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.input_channels() {
            return Err(Error::shape(op, s.with_channels(self.input_channels()), s));
        }
        Ok(())
    }

    /// Forward pass that leaves the network untouched. In train mode batch
    /// norm uses batch statistics but running statistics are not updated.
    pub fn forward(&self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check_input("network forward", input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(p) => ops::conv2d_forward(&x, p)?,
                Layer::BatchNorm(p) => match mode {
                    Mode::Infer => ops::batchnorm_infer(&x, p)?,
                    Mode::Train => ops::batchnorm_train(&x, &mut p.clone())?.0,
                },
                Layer::Relu => ops::relu(&x),
                Layer::Sigmoid => ops::sigmoid(&x),
                Layer::Linear => x,
            };
        }
        Ok(x)
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Replaces every batch-norm running estimate with the average of the
    /// batch statistics seen over `batches`, weighted by batch size, using
    /// the current weights.
    /// Layers are otherwise untouched. Returns the number of batches used.
    pub fn recalibrate_batchnorm<I>(&mut self, batches: I) -> Result<usize>
    where
        I: IntoIterator<Item = Tensor4<T>>,
    {
        let saved: Vec<f64> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(p) => Some(p.momentum),
                _ => None,
            })
            .collect();
        let mut k = 0usize;
        let mut seen = 0usize;
        let mut outcome = Ok(());
        for input in batches {
            if let Err(e) = self.check_input("recalibrate_batchnorm", &input) {
                outcome = Err(e);
                break;
            }
            k += 1;
            seen += input.shape().n;
            // cumulative average: a batch of n enters with weight n / seen
            let weight = input.shape().n as f64 / seen as f64;
            let mut x = input;
            for layer in &mut self.layers {
                let step = match layer {
                    Layer::Conv(p) => ops::conv2d_forward(&x, p),
                    Layer::BatchNorm(p) => {
                        p.momentum = weight;
                        ops::batchnorm_train(&x, p).map(|(y, _)| y)
                    }
                    Layer::Relu => Ok(ops::relu(&x)),
                    Layer::Sigmoid => Ok(ops::sigmoid(&x)),
                    Layer::Linear => Ok(x),
                };
                match step {
                    Ok(y) => x = y,
                    Err(e) => {
                        outcome = Err(e);
                        break;
                    }
                }
            }
            if outcome.is_err() {
                break;
            }
        }
        let mut m = saved.into_iter();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(p) = layer {
                if let Some(v) = m.next() {
                    p.momentum = v;
                }
            }
        }
        outcome.map(|_| k)
    }

    /// Forward pass recording what [`Network::backward`] needs. Train mode
    /// updates batch-norm running statistics.
    pub fn forward_tape(
        &mut self,
        input: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, Tape<T>)> {
        self.check_input("network forward", input)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(p) => {
                    let y = ops::conv2d_forward(&x, p)?;
                    entries.push(Saved::Input(x));
                    y
                }
                Layer::BatchNorm(p) => {
                    let (y, cache) = match mode {
                        Mode::Train => ops::batchnorm_train(&x, p)?,
                        Mode::Infer => infer_with_cache(&x, p)?,
                    };
                    entries.push(Saved::BatchNorm { cache, mode });
                    y
                }
                Layer::Relu => {
                    let mut y = x;
                    let mut mask = Vec::with_capacity(y.data().len());
                    for v in y.data_mut() {
                        let on = *v > T::zero();
                        if !on {
                            *v = T::zero();
                        }
                        mask.push(on);
                    }
                    entries.push(Saved::Mask(mask));
                    y
                }
                Layer::Sigmoid => {
                    let y = ops::sigmoid(&x);
                    entries.push(Saved::Output(y.clone()));
                    y
                }
                Layer::Linear => {
                    entries.push(Saved::Nothing);
                    x
                }
            };
        }
        Ok((x, Tape { entries }))
    }

    /// Reverse pass. Returns the input gradient (when requested) and the
    /// parameter gradients in [`Network::parameter_lengths`] order.
    pub fn backward(
        &self,
        tape: Tape<T>,
        grad_out: Tensor4<T>,
        need_input: bool,
    ) -> Result<(Option<Tensor4<T>>, Vec<Vec<T>>)> {
        self.backward_from(tape, grad_out, need_input, self.layers.len())
    }

    /// Reverse pass for a network ending in a sigmoid, seeded with the
    /// gradient at the sigmoid's input. Lets a loss fused with the sigmoid
    /// keep its gradient where `y (1 - y)` has underflowed to zero.
    pub fn backward_logits(
        &self,
        tape: Tape<T>,
        grad_logits: Tensor4<T>,
        need_input: bool,
    ) -> Result<(Option<Tensor4<T>>, Vec<Vec<T>>)> {
        if !matches!(self.layers.last(), Some(Layer::Sigmoid)) {
            return Err(Error::invalid(
                "backward_logits: network does not end in a sigmoid",
            ));
        }
        self.backward_from(tape, grad_logits, need_input, self.layers.len() - 1)
    }

    fn backward_from(
        &self,
        tape: Tape<T>,
        grad_out: Tensor4<T>,
        need_input: bool,
        end: usize,
    ) -> Result<(Option<Tensor4<T>>, Vec<Vec<T>>)> {
        if tape.entries.len() != self.layers.len() {
            return Err(Error::invalid("tape does not belong to this network"));
        }
        let mut grads_rev: Vec<Vec<T>> = Vec::new();
        let mut g = grad_out;
        let pairs = self.layers.iter().zip(tape.entries).take(end);
        for (i, (layer, saved)) in pairs.enumerate().rev() {
            g = match (layer, saved) {
                (Layer::Conv(p), Saved::Input(x)) => {
                    let want_input = i > 0 || need_input;
                    let cg = ops::conv2d_backward(&x, p, &g, want_input)?;
                    grads_rev.push(cg.bias);
                    grads_rev.push(cg.kernel);
                    match cg.input {
                        Some(gi) => gi,
                        None => return Ok((None, finish(grads_rev))),
                    }
                }
                (Layer::BatchNorm(p), Saved::BatchNorm { cache, mode }) => {
                    let bg = match mode {
                        Mode::Train => ops::batchnorm_backward(&cache, p, &g)?,
                        Mode::Infer => infer_backward(&cache, p, &g)?,
                    };
                    grads_rev.push(bg.beta);
                    grads_rev.push(bg.gamma);
                    bg.input
                }
                (Layer::Relu, Saved::Mask(mask)) => {
                    let mut g = g;
                    for (v, &on) in g.data_mut().iter_mut().zip(&mask) {
                        if !on {
                            *v = T::zero();
                        }
                    }
                    g
                }
                (Layer::Sigmoid, Saved::Output(y)) => ops::sigmoid_backward(&y, &g)?,
                (Layer::Linear, Saved::Nothing) => g,
                _ => return Err(Error::invalid("tape entry does not match layer")),
            };
        }
        Ok((Some(g), finish(grads_rev)))
    }
}

fn finish<T>(mut rev: Vec<Vec<T>>) -> Vec<Vec<T>> {
    rev.reverse();
    rev
}

fn infer_with_cache<T: Scalar>(
    x: &Tensor4<T>,
    p: &BatchNormParams<T>,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let eps = T::from_f64(p.epsilon);
    let inv_std: Vec<T> = p
        .running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let s = x.shape();
    let plane = s.plane();
    let mut normalized = x.clone();
    for n in 0..s.n {
        for (c, row) in normalized.item_mut(n).chunks_exact_mut(plane).enumerate() {
            for v in row {
                *v = (*v - p.running_mean[c]) * inv_std[c];
            }
        }
    }
    let y = ops::batchnorm_infer(x, p)?;
    Ok((
        y,
        BatchNormCache {
            normalized,
            inv_std,
        },
    ))
}

fn infer_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    g: &Tensor4<T>,
) -> Result<ops::BatchNormGrads<T>> {
    let s = cache.normalized.shape();
    g.expect_shape("batchnorm_backward", s)?;
    let plane = s.plane();
    let mut gamma = vec![T::zero(); s.c];
    let mut beta = vec![T::zero(); s.c];
    let mut input = g.clone();
    for n in 0..s.n {
        let xh = cache.normalized.item(n);
        for (c, row) in input.item_mut(n).chunks_exact_mut(plane).enumerate() {
            let scale = p.gamma[c] * cache.inv_std[c];
            for (j, v) in row.iter_mut().enumerate() {
                gamma[c] = gamma[c] + *v * xh[c * plane + j];
                beta[c] = beta[c] + *v;
                *v = *v * scale;
            }
        }
    }
    Ok(ops::BatchNormGrads { input, gamma, beta })
}
