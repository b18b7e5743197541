//! The Feature Pyramid channel: three stacked asymmetric dilated blocks
//! whose outputs are concatenated.

use rand::Rng;

use super::units::ConvUnit;
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Forward, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FpChannelConfig {
    pub in_width: usize,
    pub block_widths: [usize; 3],
    pub dilation: usize,
}

impl FpChannelConfig {
    /// Splits `out_width` as one quarter, one quarter, one half.
    pub fn new(in_width: usize, out_width: usize, dilation: usize) -> Result<Self> {
        if in_width == 0 {
            return Err(Error::Config("FP channel input width must be positive".into()));
        }
        if out_width == 0 || !out_width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "FP channel output width {out_width} is not a positive multiple of 4"
            )));
        }
        if dilation == 0 {
            return Err(Error::Config("dilation rate must be at least 1".into()));
        }
        let q = out_width / 4;
        Ok(FpChannelConfig {
            in_width,
            block_widths: [q, q, 2 * q],
            dilation,
        })
    }

    pub fn out_width(&self) -> usize {
        self.block_widths.iter().sum()
    }

    /// The six asymmetric convolutions in execution order.
    pub fn conv_specs(&self) -> [ConvSpec; 6] {
        let [a, b, c] = self.block_widths;
        let r = self.dilation;
        [
            ConvSpec::same(self.in_width, a, 3, 1, r),
            ConvSpec::same(a, a, 1, 3, r),
            ConvSpec::same(a, b, 3, 1, r),
            ConvSpec::same(b, b, 1, 3, r),
            ConvSpec::same(b, c, 3, 1, r),
            ConvSpec::same(c, c, 1, 3, r),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct FpChannel {
    pub config: FpChannelConfig,
    pub units: Vec<ConvUnit>,
}

impl FpChannel {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: FpChannelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let names = ["block1.conv3x1", "block1.conv1x3", "block2.conv3x1", "block2.conv1x3", "block3.conv3x1", "block3.conv1x3"];
        let units = config
            .conv_specs()
            .into_iter()
            .zip(names)
            .map(|(spec, name)| ConvUnit::conv_bn_act(store, &format!("{prefix}.{name}"), spec, rng))
            .collect::<Result<_>>()?;
        Ok(FpChannel { config, units })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let blocks = self.forward_blocks(fwd, x)?;
        fwd.tape.concat(&[&blocks[0], &blocks[1], &blocks[2]])
    }

    /// Outputs of the three blocks before concatenation.
    pub fn forward_blocks<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<[Var<T>; 3]> {
        if x.shape()[1] != self.config.in_width {
            return Err(Error::shape(
                "fp_channel",
                format!("expected {} input channels, got {}", self.config.in_width, x.shape()[1]),
            ));
        }
        let mut outs = Vec::with_capacity(3);
        let mut cur = x.clone();
        for pair in self.units.chunks(2) {
            cur = pair[0].forward(fwd, &cur)?;
            cur = pair[1].forward(fwd, &cur)?;
            outs.push(cur.clone());
        }
        let [a, b, c]: [Var<T>; 3] = outs.try_into().expect("three blocks");
        Ok([a, b, c])
    }

    pub fn collect_params(&self, out: &mut Vec<ParamId>) {
        for u in &self.units {
            u.collect_params(out);
        }
    }
}
