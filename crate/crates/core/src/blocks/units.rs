//! Convolution / normalization / activation units shared by all blocks.

use rand::Rng;

use crate::error::Result;
use crate::ops::{ConvSpec, Mode};
use crate::params::{BnUpdate, Forward, ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Default PReLU slope at initialization.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let v = |x: f64| Tensor::vector(vec![T::of(x); channels]);
        BatchNormLayer {
            channels,
            gamma: store.add(format!("{prefix}.gamma"), ParamKind::BnGamma, v(1.0)),
            beta: store.add(format!("{prefix}.beta"), ParamKind::BnBeta, v(0.0)),
            running_mean: store.add(format!("{prefix}.running_mean"), ParamKind::BnRunningMean, v(0.0)),
            running_var: store.add(format!("{prefix}.running_var"), ParamKind::BnRunningVar, v(1.0)),
        }
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = fwd.param(self.gamma);
        let beta = fwd.param(self.beta);
        let store = fwd.store();
        let mode = fwd.mode();
        let cfg = fwd.bn_config();
        let (y, saved) = fwd.tape.batch_norm(
            x,
            &gamma,
            &beta,
            store.get(self.running_mean),
            store.get(self.running_var),
            mode,
            cfg,
        )?;
        if mode == Mode::Train {
            if let Some(batch_var) = saved.batch_var {
                fwd.record_bn_update(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    batch_mean: saved.mean,
                    batch_var,
                });
            }
        }
        Ok(y)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.gamma, self.beta, self.running_mean, self.running_var]
    }
}

#[derive(Clone, Debug)]
pub struct PreluLayer {
    pub channels: usize,
    pub alpha: ParamId,
}

impl PreluLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        PreluLayer {
            channels,
            alpha: store.add(
                format!("{prefix}.alpha"),
                ParamKind::PreluAlpha,
                Tensor::vector(vec![T::of(PRELU_INIT); channels]),
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let alpha = fwd.param(self.alpha);
        fwd.tape.prelu(x, &alpha)
    }
}

/// Convolution, optionally followed by batch normalization and PReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BatchNormLayer>,
    pub act: Option<PreluLayer>,
}

impl ConvUnit {
    /// Bias-free convolution followed by BN and PReLU.
    pub fn conv_bn_act<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let mut unit = Self::plain(store, prefix, spec, rng)?;
        unit.bn = Some(BatchNormLayer::new(store, &format!("{prefix}.bn"), spec.out_channels));
        unit.act = Some(PreluLayer::new(store, &format!("{prefix}.act"), spec.out_channels));
        Ok(unit)
    }

    /// Bias-free convolution followed by BN only.
    pub fn conv_bn<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let mut unit = Self::plain(store, prefix, spec, rng)?;
        unit.bn = Some(BatchNormLayer::new(store, &format!("{prefix}.bn"), spec.out_channels));
        Ok(unit)
    }

    /// Bare convolution, with a zero-initialized bias when `spec.has_bias`.
    pub fn plain<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = store.kaiming(format!("{prefix}.weight"), spec.weight_shape(), rng);
        let bias = spec.has_bias.then(|| {
            store.add(
                format!("{prefix}.bias"),
                ParamKind::ConvBias,
                Tensor::vector(vec![T::zero(); spec.out_channels]),
            )
        });
        Ok(ConvUnit {
            spec,
            weight,
            bias,
            bn: None,
            act: None,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = fwd.param(self.weight);
        let b = self.bias.map(|id| fwd.param(id));
        let mut y = fwd.tape.conv2d(x, &w, b.as_ref(), &self.spec)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(fwd, &y)?;
        }
        if let Some(act) = &self.act {
            y = act.forward(fwd, &y)?;
        }
        Ok(y)
    }

    pub fn collect_params(&self, out: &mut Vec<ParamId>) {
        out.push(self.weight);
        out.extend(self.bias);
        if let Some(bn) = &self.bn {
            out.extend(bn.params());
        }
        if let Some(act) = &self.act {
            out.push(act.alpha);
        }
    }
}
