//! Named parameter storage and the per-pass forward context.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{BnConfig, Mode};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
    PreluAlpha,
    /// Per-channel input mean subtracted before the network sees an image.
    InputMean,
}

impl ParamKind {
    /// Trained by the optimizer (as opposed to a statistics buffer).
    pub fn is_trainable(self) -> bool {
        !matches!(
            self,
            ParamKind::BnRunningMean | ParamKind::BnRunningVar | ParamKind::InputMean
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    value: Arc<Tensor<T>>,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

/// Every trainable tensor and statistics buffer of a model, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            value: Arc::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    /// Mutable access; clones the storage if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replace a tensor, keeping its shape.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape(
                "param_store",
                format!(
                    "{}: {:?} cannot replace {:?}",
                    entry.name,
                    value.shape(),
                    entry.value.shape()
                ),
            ));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    /// Element count of every entry of `kind`.
    pub fn count_kind(&self, kind: ParamKind) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Fold the batch statistics of one training pass into running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            let mut mean = (*self.entries[u.running_mean.0].value).clone();
            let mut var = (*self.entries[u.running_var.0].value).clone();
            crate::ops::norm::update_running_stats(&mut mean, &mut var, &u.batch_mean, &u.batch_var, momentum);
            self.entries[u.running_mean.0].value = Arc::new(mean);
            self.entries[u.running_var.0].value = Arc::new(var);
        }
    }

    pub(crate) fn kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        rng: &mut R,
    ) -> ParamId {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
        // gain for PReLU with the default slope 0.25
        let std = (2.0 / (1.0 + 0.25f64 * 0.25) / fan_in as f64).sqrt();
        self.add(name, ParamKind::ConvWeight, Tensor::random_normal(shape, 0.0, std, rng))
    }
}

/// Running-statistics update produced by a train-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// State threaded through one forward pass of a model built on a [`ParamStore`].
pub struct Forward<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    bn: BnConfig,
    vars: BTreeMap<ParamId, Var<T>>,
    bn_updates: Vec<BnUpdate>,
}

/// Parameter leaves and normalization statistics collected by a forward pass.
pub struct ForwardRecord<T> {
    pub params: BTreeMap<ParamId, Var<T>>,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Forward {
            tape,
            store,
            mode,
            bn: BnConfig::default(),
            vars: BTreeMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn bn_config(&self) -> BnConfig {
        self.bn
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// Tape leaf for a stored parameter; one leaf per parameter per pass.
    pub fn param(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = self.vars.get(&id) {
            return v.clone();
        }
        let entry = self.store.entry(id);
        let v = self
            .tape
            .leaf_shared(self.store.shared(id), entry.kind.is_trainable());
        self.vars.insert(id, v.clone());
        v
    }

    pub fn record_bn_update(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    pub fn finish(self) -> ForwardRecord<T> {
        ForwardRecord {
            params: self.vars,
            bn_updates: self.bn_updates,
        }
    }
}
