//! Optimizer, schedule, augmentation, synthetic data, metrics and the
//! training loop.

mod adam;
mod augment;
mod metrics;
mod schedule;
mod toy;
mod trainer;

pub use adam::{Adam, AdamConfig, DecayMode};
pub use augment::{augment, crop_or_pad, flip_horizontal, rescale, subtract_mean, AugmentConfig, ToySample, TRAIN_SCALES};
pub use metrics::{miou, pixel_accuracy, ConfusionMatrix, MiouReport};
pub use schedule::{poly_lr, PolySchedule, POLY_POWER};
pub use toy::{dataset_mean, gen_toy_dataset};
pub use trainer::{evaluate, train, Evaluation, History, IterRecord, TrainConfig, TOY_BASE_LR, TOY_BATCH};
