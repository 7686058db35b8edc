//! The two networks and their composition.

mod cascade;
mod layer;
mod network;

pub use cascade::{
    approximated_background, bcnn_forward, cascade_input, segment_probabilities, ResidualMap,
};
pub use layer::{ColorTag, Layer, LayerKind, LayerSpec};
pub use network::{
    build_bcnn, build_network, build_scnn, layer_specs, Architecture, Network, NetworkName, Tape,
};

/// Trainable parameters of BCNN and SCNN together.
pub const PUBLISHED_PARAMETER_TOTAL: usize = 1_112_770;
