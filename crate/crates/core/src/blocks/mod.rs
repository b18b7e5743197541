//! Composite blocks built from the primitive ops.

mod cfp;
mod downsample;
mod fp;
mod schedule;
mod units;

pub use cfp::{hff_fuse, CfpModule, CfpModuleConfig, ReductionMode, DEFAULT_CHANNELS};
pub use downsample::{inject_input, Downsampler, DownsamplerConfig};
pub use fp::{FpChannel, FpChannelConfig};
pub use schedule::dilation_schedule;
pub use units::{BatchNormLayer, ConvUnit, PreluLayer, PRELU_INIT};
