//! Differentiable layers, each a forward function paired with a hand-derived backward.

pub mod batchnorm;
pub mod conv;
pub(crate) mod gemm;
pub mod loss;
pub mod relu;
pub mod resize;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormGrads, Mode};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams, ConvSpec};
pub use loss::{softmax, softmax_cross_entropy, LossValue};
pub use relu::{relu_backward, relu_forward};
pub use resize::{bilinear_resize_backward, bilinear_resize_forward};
