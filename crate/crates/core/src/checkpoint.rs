//! Checkpoint byte format.
//!
//! ```text
//! magic     8 bytes   "CRCNN\0\0" followed by the format version byte
//! length    u32 LE    size of the JSON header in bytes
//! header    UTF-8 JSON: layer table, blob table, optimizer settings, metadata
//! blobs     little-endian f32 values, in blob-table order
//! ```
//!
//! Blobs per layer: conv `kernel`, `bias`; batch norm `gamma`, `beta`,
//! `running_mean`, `running_var`. With optimizer state, the first and second
//! moments of every trainable tensor follow.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::model::{Layer, LayerKind, LayerSpec, Network, NetworkName};
use crate::ops::{BatchNormParams, ConvParams};
use crate::tensor::{Shape4, Tensor4};

pub const FORMAT_VERSION: u8 = 1;
pub const MAGIC: [u8; 8] = *b"CRCNN\0\0\x01";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub seed: u64,
    /// Mean gray level subtracted from inputs, in `[0, 1]`.
    pub dataset_mean: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u8,
    network: NetworkName,
    layers: Vec<LayerSpec>,
    blobs: Vec<BlobInfo>,
    optimizer: Option<OptimizerHeader>,
    metadata: TrainingMetadata,
}

fn layer_blobs(index: usize, kind: &LayerKind) -> Vec<BlobInfo> {
    let blob = |what: &str, shape: Vec<usize>| BlobInfo {
        name: format!("layers.{index}.{what}"),
        shape,
    };
    match *kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
        } => alloc::vec![
            blob("kernel", alloc::vec![out_channels, in_channels, 3, 3]),
            blob("bias", alloc::vec![out_channels]),
        ],
        LayerKind::BatchNorm { channels, .. } => ["gamma", "beta", "running_mean", "running_var"]
            .iter()
            .map(|w| blob(w, alloc::vec![channels]))
            .collect(),
        _ => Vec::new(),
    }
}

fn trainable_blobs(layers: &[LayerSpec]) -> Vec<BlobInfo> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, s)| layer_blobs(i, &s.kind))
        .filter(|b| !b.name.ends_with("running_mean") && !b.name.ends_with("running_var"))
        .collect()
}

/// Blob table implied by a layer table.
fn expected_blobs(layers: &[LayerSpec], with_optimizer: bool) -> Vec<BlobInfo> {
    let mut blobs: Vec<BlobInfo> = layers
        .iter()
        .enumerate()
        .flat_map(|(i, s)| layer_blobs(i, &s.kind))
        .collect();
    if with_optimizer {
        for moment in ["m", "v"] {
            for b in trainable_blobs(layers) {
                blobs.push(BlobInfo {
                    name: format!("adam.{moment}.{}", b.name),
                    shape: b.shape,
                });
            }
        }
    }
    blobs
}

impl Checkpoint {
    pub fn new(network: Network<f32>) -> Self {
        Self {
            network,
            optimizer: None,
            metadata: TrainingMetadata::default(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let layers = self.network.specs().to_vec();
        let header = Header {
            format_version: FORMAT_VERSION,
            network: self.network.name(),
            blobs: expected_blobs(&layers, self.optimizer.is_some()),
            layers,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                step: o.step,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                learning_rate: o.learning_rate,
            }),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(
            MAGIC.len() + 4 + json.len() + 4 * self.network.count_parameters() * 3,
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f32]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for layer in self.network.layers() {
            match layer {
                Layer::Conv(p) => {
                    put(p.kernel.data());
                    put(&p.bias);
                }
                Layer::BatchNorm(p) => {
                    put(&p.gamma);
                    put(&p.beta);
                    put(&p.running_mean);
                    put(&p.running_var);
                }
                _ => {}
            }
        }
        if let Some(o) = &self.optimizer {
            for m in &o.m {
                put(m);
            }
            for v in &o.v {
                put(v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 {
            return Err(Error::Format("file truncated before header".into()));
        }
        if bytes[..7] != MAGIC[..7] {
            return Err(Error::Format("bad magic bytes".into()));
        }
        if bytes[7] != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                bytes[7]
            )));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < len {
            return Err(Error::Format("file truncated inside header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "header declares version {}, magic declares {FORMAT_VERSION}",
                header.format_version
            )));
        }
        let expected = expected_blobs(&header.layers, header.optimizer.is_some());
        if expected != header.blobs {
            return Err(Error::Format(
                "blob table disagrees with layer table".into(),
            ));
        }
        let total: usize = expected
            .iter()
            .map(|b| b.shape.iter().product::<usize>())
            .sum();
        let data = &body[len..];
        if data.len() < total * 4 {
            return Err(Error::Format(format!(
                "file truncated: {} parameter bytes, expected {}",
                data.len(),
                total * 4
            )));
        }
        if data.len() > total * 4 {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameter data",
                data.len() - total * 4
            )));
        }
        let mut values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };

        let mut layers = Vec::with_capacity(header.layers.len());
        for spec in &header.layers {
            layers.push(match spec.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                } => {
                    let shape = Shape4::new(out_channels, in_channels, 3, 3);
                    let kernel = Tensor4::from_vec(shape, take(shape.len()))
                        .map_err(|e| Error::Format(e.to_string()))?;
                    Layer::Conv(ConvParams {
                        kernel,
                        bias: take(out_channels),
                    })
                }
                LayerKind::BatchNorm {
                    channels,
                    epsilon,
                    momentum,
                } => Layer::BatchNorm(BatchNormParams {
                    gamma: take(channels),
                    beta: take(channels),
                    running_mean: take(channels),
                    running_var: take(channels),
                    epsilon,
                    momentum,
                }),
                LayerKind::Relu => Layer::Relu,
                LayerKind::Sigmoid => Layer::Sigmoid,
                LayerKind::Linear => Layer::Linear,
            });
        }
        let network = Network::from_parts(header.network, header.layers.clone(), layers)
            .map_err(|e| Error::Format(e.to_string()))?;
        let optimizer = header.optimizer.map(|o| {
            let lengths = network.parameter_lengths();
            let m = lengths.iter().map(|&n| take(n)).collect();
            let v = lengths.iter().map(|&n| take(n)).collect();
            AdamState {
                step: o.step,
                m,
                v,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                learning_rate: o.learning_rate,
            }
        });
        Ok(Self {
            network,
            optimizer,
            metadata: header.metadata,
        })
    }

    /// Decodes and checks the layer table against a declared architecture.
    pub fn decode_expecting(bytes: &[u8], name: NetworkName, layers: &[LayerSpec]) -> Result<Self> {
        let ck = Self::decode(bytes)?;
        if ck.network.name() != name {
            return Err(Error::Format(format!(
                "checkpoint holds {}, expected {name}",
                ck.network.name()
            )));
        }
        if ck.network.specs() != layers {
            let at = ck
                .network
                .specs()
                .iter()
                .zip(layers)
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| ck.network.specs().len().min(layers.len()));
            return Err(Error::Format(format!(
                "layer table disagrees with the declared network at layer {at} ({} vs {} layers)",
                ck.network.specs().len(),
                layers.len()
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, layer_specs, Architecture};

    fn small() -> Checkpoint {
        let arch = Architecture {
            middle_layers: 2,
            width: 4,
            scnn_batchnorm: false,
        };
        let net = build_network(NetworkName::Bcnn, arch, 3);
        let mut opt = AdamState::new(1e-3, net.parameter_lengths());
        opt.step = 7;
        opt.m[0][0] = 0.25;
        opt.v[1][0] = 1.5;
        Checkpoint {
            network: net,
            optimizer: Some(opt),
            metadata: TrainingMetadata {
                epochs_run: 4,
                final_loss: 0.0123,
                seed: 99,
                dataset_mean: 0.4,
                threshold: 0.8,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = small();
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), ck.encode());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = small().encode();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format(m)) if m.contains("magic")));
        let mut bytes = small().encode();
        bytes[7] = 2;
        assert!(
            matches!(Checkpoint::decode(&bytes), Err(Error::Format(m)) if m.contains("version"))
        );
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = small().encode();
        for cut in [5, 20, bytes.len() - 1] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::decode(&longer).is_err());
    }

    #[test]
    fn rejects_architecture_mismatch() {
        let bytes = small().encode();
        let canonical = layer_specs(NetworkName::Bcnn, Architecture::CANONICAL);
        assert!(Checkpoint::decode_expecting(&bytes, NetworkName::Bcnn, &canonical).is_err());
        let own = small().network.specs().to_vec();
        assert!(Checkpoint::decode_expecting(&bytes, NetworkName::Scnn, &own).is_err());
        assert!(Checkpoint::decode_expecting(&bytes, NetworkName::Bcnn, &own).is_ok());
    }
}
