//! Tensor kernels: pure forward functions and their explicit backward
//! counterparts. The autodiff tape composes these.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use activation::prelu;
pub use concat::concat_channels;
pub use conv::{conv2d, ConvSpec};
pub use loss::cross_entropy;
pub use norm::{batch_norm, BnConfig, Mode};
pub use pool::{avgpool, maxpool2x2};
pub use upsample::{bilinear_upsample, resize_bilinear};
