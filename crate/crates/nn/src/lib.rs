//! Minimal CPU building blocks for small convolutional networks.
//!
//! Every layer owns its parameters and caches exactly what its backward pass
//! needs. Tensors are `ndarray::Array4` in NCHW order. Layers are generic over
//! [`Real`] so the same code runs in `f32` for training and `f64` for
//! finite-difference checks.

pub mod adam;
pub mod init;
pub mod layers;
pub mod param;
pub mod real;
pub mod serialize;
pub mod tensor;

pub use adam::Adam;
pub use layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, DepthwiseConv2d, Layer, LeakyRelu, Mode, Relu,
    Sequential,
};
pub use param::{Param, ParamSet};
pub use real::Real;
pub use serialize::{read_params, write_params, SerializeError};
