use rand::Rng;

use super::units::{BatchNormLayer, ConvUnit, PreluLayer};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Forward, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DownsamplerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DownsamplerConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == 0 || out_channels <= in_channels {
            return Err(Error::Config(format!(
                "downsampler {in_channels}→{out_channels} leaves no filters for the conv branch"
            )));
        }
        Ok(DownsamplerConfig {
            in_channels,
            out_channels,
        })
    }

    pub fn conv_filters(&self) -> usize {
        self.out_channels - self.in_channels
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::strided(self.in_channels, self.conv_filters(), 3, 2, 1)
    }
}

/// Stride-2 3×3 convolution alongside 2×2 max pooling, concatenated, then BN
/// and PReLU.
#[derive(Clone, Debug)]
pub struct Downsampler {
    pub config: DownsamplerConfig,
    pub conv: ConvUnit,
    pub bn: BatchNormLayer,
    pub act: PreluLayer,
}

impl Downsampler {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: DownsamplerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Downsampler {
            config,
            conv: ConvUnit::plain(store, &format!("{prefix}.conv"), config.conv_spec(), rng)?,
            bn: BatchNormLayer::new(store, &format!("{prefix}.bn"), config.out_channels),
            act: PreluLayer::new(store, &format!("{prefix}.act"), config.out_channels),
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let cat = self.forward_branches(fwd, x)?;
        let y = self.bn.forward(fwd, &cat)?;
        self.act.forward(fwd, &y)
    }

    /// The concatenated conv and pool branches, before normalization.
    pub fn forward_branches<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let [_, c, h, w] = x.shape();
        if c != self.config.in_channels {
            return Err(Error::shape(
                "downsample",
                format!("expected {} input channels, got {c}", self.config.in_channels),
            ));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::shape("downsample", format!("spatial extents {h}×{w} must be even and nonzero")));
        }
        let conv = self.conv.forward(fwd, x)?;
        let pool = fwd.tape.maxpool2x2(x)?;
        fwd.tape.concat(&[&conv, &pool])
    }

    pub fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.conv.collect_params(out);
        out.extend(self.bn.params());
        out.push(self.act.alpha);
    }
}

/// Concatenates `features` with the raw image average-pooled by `factor`.
pub fn inject_input<T: Scalar>(
    fwd: &mut Forward<'_, T>,
    features: &Var<T>,
    image: &Var<T>,
    factor: usize,
) -> Result<Var<T>> {
    let pooled = fwd.tape.avgpool(image, factor)?;
    let [fnb, _, fh, fw] = features.shape();
    let [pn, _, ph, pw] = pooled.shape();
    if (fnb, fh, fw) != (pn, ph, pw) {
        return Err(Error::shape(
            "inject_input",
            format!("pooled image {pn}×{ph}×{pw} does not match features {fnb}×{fh}×{fw}"),
        ));
    }
    fwd.tape.concat(&[features, &pooled])
}
