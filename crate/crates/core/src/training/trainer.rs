use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::augment::{augment, AugmentConfig, ToySample};
use super::metrics::ConfusionMatrix;
use super::schedule::PolySchedule;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::network::Network;
use crate::ops::Mode;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Learning rate for desk-scale runs.
pub const TOY_BASE_LR: f64 = 5e-4;
/// Images per optimizer step for desk-scale runs.
pub const TOY_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn toy(iters: usize, size: usize, seed: u64, mean: [f64; 3]) -> Self {
        TrainConfig {
            iters,
            batch_size: TOY_BATCH,
            base_lr: TOY_BASE_LR,
            seed,
            augment: AugmentConfig::new(mean, (size, size)),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<IterRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `iter,lr,loss` header and one row per iteration, `\n` terminated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lr,loss\n");
        for r in &self.records {
            writeln!(out, "{},{:e},{:e}", r.iter, r.lr, r.loss).expect("writing to a String");
        }
        out
    }
}

/// Trains `net` for `cfg.iters` iterations: augment a batch, forward in
/// train mode, cross-entropy, backward, one Adam step at the poly rate, and
/// fold the batch statistics into the running buffers. The network's input
/// mean is set to the augmentation mean.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &[ToySample<T>],
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterRecord),
) -> Result<History> {
    cfg.augment.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if cfg.iters > 0 && data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    for s in data {
        s.label.validate(net.classes(), IGNORE_INDEX)?;
    }
    net.set_input_mean(cfg.augment.mean);
    let sched = PolySchedule::new(cfg.base_lr, cfg.iters);
    let mut adam = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut history = History::default();

    for iter in 0..cfg.iters {
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled");
            let s = augment(&data[idx], &cfg.augment, &mut rng)?;
            images.push(s.image);
            labels.push(s.label);
        }
        let images = Tensor::stack(&images)?;
        let labels = LabelMap::stack(&labels)?;

        let mut tape = Tape::new();
        let x = tape.constant(images);
        let (logits, record) = net.forward(&mut tape, &x, Mode::Train)?;
        let loss = tape.cross_entropy(&logits, &labels, IGNORE_INDEX)?;
        let loss_value = loss.value().data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: "loss".into(),
                iteration: iter,
            });
        }
        let grads = tape.backward(&loss)?;
        let store = net.store();
        let updates: Vec<_> = record
            .params
            .iter()
            .filter(|(id, _)| store.entry(**id).kind.is_trainable())
            .map(|(id, var)| (*id, grads.wrt(var)))
            .collect();
        drop(record.params);
        let bn_updates = record.bn_updates;
        drop(grads);
        drop(tape);
        let lr = sched.lr(iter)?;
        adam.step(net.store_mut(), &updates, lr).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, iteration: iter },
            other => other,
        })?;
        net.apply_bn_updates(&bn_updates);
        let rec = IterRecord {
            iter,
            lr,
            loss: loss_value,
        };
        on_iter(&rec);
        history.records.push(rec);
    }
    Ok(history)
}

/// Pixel accuracy and IoU of a network's segmentations over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn pixel_accuracy(&self) -> f64 {
        self.confusion.pixel_accuracy().unwrap_or(0.0)
    }

    pub fn mean_iou(&self) -> f64 {
        self.confusion.mean_iou().unwrap_or(0.0)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        self.confusion.iou()
    }
}

pub fn evaluate<T: Scalar>(net: &Network<T>, samples: &[ToySample<T>]) -> Result<Evaluation> {
    let mut confusion = ConfusionMatrix::new(net.classes());
    for s in samples {
        let pred = net.segment(&s.image)?;
        confusion.add(&pred, &s.label)?;
    }
    Ok(Evaluation { confusion })
}
