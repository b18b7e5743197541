//! The CFP module: reduction, K parallel FP channels at increasing
//! dilation, hierarchical feature fusion, projection and residual.

use rand::Rng;

use super::fp::{FpChannel, FpChannelConfig};
use super::schedule::dilation_schedule;
use super::units::{ConvUnit, PreluLayer};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Forward, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;

/// Default number of FP channels per module.
pub const DEFAULT_CHANNELS: usize = 4;

/// How the module input is reduced before the FP channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReductionMode {
    /// One 1×1 convolution M→M/K whose output feeds every channel.
    #[default]
    Shared,
    /// A separate 1×1 convolution M→M/K per channel.
    PerChannel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfpModuleConfig {
    pub width: usize,
    pub channels: usize,
    pub peak_dilation: usize,
    pub dilations: Vec<usize>,
    pub reduction: ReductionMode,
}

impl CfpModuleConfig {
    pub fn new(width: usize, channels: usize, peak_dilation: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("a CFP module needs at least one FP channel".into()));
        }
        if width == 0 || !width.is_multiple_of(4 * channels) {
            return Err(Error::Config(format!(
                "module width {width} is not divisible by 4·K = {}",
                4 * channels
            )));
        }
        Ok(CfpModuleConfig {
            width,
            channels,
            peak_dilation,
            dilations: dilation_schedule(peak_dilation, channels)?,
            reduction: ReductionMode::Shared,
        })
    }

    pub fn with_reduction(mut self, reduction: ReductionMode) -> Self {
        self.reduction = reduction;
        self
    }

    /// Width of each FP channel's input and output (M/K).
    pub fn channel_width(&self) -> usize {
        self.width / self.channels
    }

    pub fn fp_config(&self, index: usize) -> FpChannelConfig {
        let w = self.channel_width();
        FpChannelConfig::new(w, w, self.dilations[index]).expect("validated widths")
    }

    /// Convolution weights of the module, counted from the configuration.
    pub fn conv_weight_count(&self) -> usize {
        let reductions = match self.reduction {
            ReductionMode::Shared => 1,
            ReductionMode::PerChannel => self.channels,
        };
        let reduce = reductions * self.width * self.channel_width();
        let fp: usize = (0..self.channels)
            .map(|i| self.fp_config(i).conv_specs().iter().map(|s| s.weight_count()).sum::<usize>())
            .sum();
        reduce + fp + self.width * self.width
    }
}

#[derive(Clone, Debug)]
pub struct CfpModule {
    pub config: CfpModuleConfig,
    pub reduce: Vec<ConvUnit>,
    pub channels: Vec<FpChannel>,
    pub project: ConvUnit,
    pub out_act: PreluLayer,
}

impl CfpModule {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: CfpModuleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let m = config.width;
        let cw = config.channel_width();
        let reduce = match config.reduction {
            ReductionMode::Shared => vec![ConvUnit::conv_bn_act(
                store,
                &format!("{prefix}.reduce"),
                ConvSpec::same(m, cw, 1, 1, 1),
                rng,
            )?],
            ReductionMode::PerChannel => (0..config.channels)
                .map(|i| {
                    ConvUnit::conv_bn_act(
                        store,
                        &format!("{prefix}.reduce{}", i + 1),
                        ConvSpec::same(m, cw, 1, 1, 1),
                        rng,
                    )
                })
                .collect::<Result<_>>()?,
        };
        let channels = (0..config.channels)
            .map(|i| FpChannel::new(store, &format!("{prefix}.fp{}", i + 1), config.fp_config(i), rng))
            .collect::<Result<_>>()?;
        let project = ConvUnit::conv_bn(store, &format!("{prefix}.project"), ConvSpec::same(m, m, 1, 1, 1), rng)?;
        let out_act = PreluLayer::new(store, &format!("{prefix}.act"), m);
        Ok(CfpModule {
            config,
            reduce,
            channels,
            project,
            out_act,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape()[1] != self.config.width {
            return Err(Error::shape(
                "cfp_module",
                format!("expected {} input channels, got {}", self.config.width, x.shape()[1]),
            ));
        }
        let reduced = self
            .reduce
            .iter()
            .map(|u| u.forward(fwd, x))
            .collect::<Result<Vec<_>>>()?;
        let mut features = Vec::with_capacity(self.channels.len());
        for (i, ch) in self.channels.iter().enumerate() {
            let input = &reduced[i.min(reduced.len() - 1)];
            features.push(ch.forward(fwd, input)?);
        }
        let fused = hff_fuse(fwd, &features)?;
        let projected = self.project.forward(fwd, &fused)?;
        let sum = fwd.tape.add(&projected, x)?;
        self.out_act.forward(fwd, &sum)
    }

    pub fn collect_params(&self, out: &mut Vec<ParamId>) {
        for u in &self.reduce {
            u.collect_params(out);
        }
        for c in &self.channels {
            c.collect_params(out);
        }
        self.project.collect_params(out);
        out.push(self.out_act.alpha);
    }
}

/// Hierarchical feature fusion: prefix sums `g_i = f_1 + … + f_i`,
/// concatenated along channels.
pub fn hff_fuse<T: Scalar>(fwd: &mut Forward<'_, T>, features: &[Var<T>]) -> Result<Var<T>> {
    let Some(first) = features.first() else {
        return Err(Error::shape("hff_fuse", "no features to fuse"));
    };
    if let Some(bad) = features.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::shape(
            "hff_fuse",
            format!("feature shape {:?} differs from {:?}", bad.shape(), first.shape()),
        ));
    }
    let mut sums = vec![first.clone()];
    for f in &features[1..] {
        let next = fwd.tape.add(sums.last().expect("nonempty"), f)?;
        sums.push(next);
    }
    if sums.len() == 1 {
        return Ok(sums.pop().expect("nonempty"));
    }
    let refs: Vec<&Var<T>> = sums.iter().collect();
    fwd.tape.concat(&refs)
}
