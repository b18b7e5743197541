//! Channel-wise feature pyramid segmentation network on a small
//! reverse-mode tensor engine. Everything numeric is generic over [`Scalar`]
//! (`f32` and `f64`); the aliases below fix the common instantiations.

pub mod blocks;
pub mod color;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod labels;
pub mod network;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use labels::LabelMap;
pub use network::{Network, VariantSpec};
pub use params::{Forward, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
