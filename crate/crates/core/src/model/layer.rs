use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ops::{BatchNormParams, ConvParams};
use crate::tensor::Scalar;

/// Layer classes of the architecture table.
///
/// * orange: 3x3x64 convolution + ReLU, no batch norm
/// * blue: 3x3x64 convolution + batch norm + ReLU
/// * green: 3x3x1 convolution, linear output
/// * yellow: 3x3x1 convolution, sigmoid output
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorTag {
    Orange,
    Blue,
    Green,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
    },
    BatchNorm {
        channels: usize,
        epsilon: f64,
        momentum: f64,
    },
    Relu,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub color: ColorTag,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
            } => write!(f, "conv3x3 {in_channels}->{out_channels}")?,
            LayerKind::BatchNorm { channels, .. } => write!(f, "batchnorm {channels}")?,
            LayerKind::Relu => f.write_str("relu")?,
            LayerKind::Sigmoid => f.write_str("sigmoid")?,
            LayerKind::Linear => f.write_str("linear")?,
        }
        write!(f, " [{:?}]", self.color)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Conv(ConvParams<T>),
    BatchNorm(BatchNormParams<T>),
    Relu,
    Sigmoid,
    Linear,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(p) => LayerKind::Conv {
                in_channels: p.in_channels(),
                out_channels: p.out_channels(),
            },
            Layer::BatchNorm(p) => LayerKind::BatchNorm {
                channels: p.channels(),
                epsilon: p.epsilon,
                momentum: p.momentum,
            },
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Linear => LayerKind::Linear,
        }
    }

    pub fn trainable_count(&self) -> usize {
        match self {
            Layer::Conv(p) => p.trainable_count(),
            Layer::BatchNorm(p) => p.trainable_count(),
            _ => 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let v = |xs: &[T]| xs.iter().map(|x| U::from_f64(x.as_f64())).collect();
        match self {
            Layer::Conv(p) => Layer::Conv(ConvParams {
                kernel: p.kernel.cast(),
                bias: v(&p.bias),
            }),
            Layer::BatchNorm(p) => Layer::BatchNorm(BatchNormParams {
                gamma: v(&p.gamma),
                beta: v(&p.beta),
                running_mean: v(&p.running_mean),
                running_var: v(&p.running_var),
                epsilon: p.epsilon,
                momentum: p.momentum,
            }),
            Layer::Relu => Layer::Relu,
            Layer::Sigmoid => Layer::Sigmoid,
            Layer::Linear => Layer::Linear,
        }
    }
}
