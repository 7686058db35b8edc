//! Forward and reverse-mode kernels for the layer set the cascade uses.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod parallel;
mod reduce;
mod winograd;

pub use activation::{
    identity, identity_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, batchnorm_train, BatchNormCache,
    BatchNormGrads, BatchNormParams, Mode,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use parallel::{set_threads, threads};
