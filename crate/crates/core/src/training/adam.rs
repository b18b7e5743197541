use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecayMode {
    /// Added to the gradient as an L2 term before the moment estimates.
    #[default]
    Coupled,
    /// Applied directly to the weights, scaled by the learning rate.
    Decoupled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 4.5e-4,
            decay_mode: DecayMode::Coupled,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter in `grads`. Nothing changes if any gradient is
    /// non-finite or mis-shaped.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            let entry = store.entry(*id);
            if g.shape() != entry.value().shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{}: gradient {:?} for parameter {:?}", entry.name, g.shape(), entry.value().shape()),
                ));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {} at element {pos}", entry.name),
                    iteration: self.step as usize,
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, g) in grads {
            let n = g.numel();
            let m = self.first.entry(*id).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(*id).or_insert_with(|| vec![0.0; n]);
            let p = store.get_mut(*id);
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let mut w = pv.as_f64();
                let mut grad = gv.as_f64();
                match c.decay_mode {
                    DecayMode::Coupled => grad += c.weight_decay * w,
                    DecayMode::Decoupled => w -= lr * c.weight_decay * w,
                }
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * grad;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * grad * grad;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                w -= lr * mhat / (vhat.sqrt() + c.epsilon);
                *pv = T::of(w);
            }
        }
        Ok(())
    }
}
