use cfpnet_core::labels::{LabelMap, IGNORE_INDEX};
use cfpnet_core::network::{Network, VariantSpec};
use cfpnet_core::ops::cross_entropy;
use cfpnet_core::training::{
    augment, dataset_mean, flip_horizontal, gen_toy_dataset, rescale, train, AugmentConfig, ToySample, TrainConfig,
};
use cfpnet_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn histogram(label: &LabelMap) -> [usize; 256] {
    let mut h = [0; 256];
    for &v in label.data() {
        h[v as usize] += 1;
    }
    h
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let logits = Tensor::<f64>::random_normal([1, 5, 4, 4], 0.0, 2.0, &mut r);
    let mut labels = LabelMap::filled([1, 4, 4], 0);
    for v in labels.data_mut() {
        *v = if r.random_bool(0.2) { IGNORE_INDEX } else { r.random_range(0..5) };
    }
    let (_, grad) = cross_entropy(&logits, &labels, IGNORE_INDEX).unwrap();
    let h = 1e-5;
    let mut max_err: f64 = 0.0;
    for i in 0..logits.numel() {
        let mut plus = logits.clone();
        plus.data_mut()[i] += h;
        let mut minus = logits.clone();
        minus.data_mut()[i] -= h;
        let fd = (cross_entropy(&plus, &labels, IGNORE_INDEX).unwrap().0
            - cross_entropy(&minus, &labels, IGNORE_INDEX).unwrap().0)
            / (2.0 * h);
        max_err = max_err.max((fd - grad.data()[i]).abs());
    }
    assert!(max_err / grad.max_abs() < 1e-4, "relative error {}", max_err / grad.max_abs());
}

#[test]
fn confident_logit_gives_near_zero_loss() {
    let mut logits = Tensor::<f64>::zeros([1, 3, 1, 1]);
    logits.set(0, 2, 0, 0, 50.0);
    let (loss, _) = cross_entropy(&logits, &LabelMap::filled([1, 1, 1], 2), IGNORE_INDEX).unwrap();
    assert!(loss < 1e-20);
}

fn sample(seed: u64) -> ToySample<f64> {
    gen_toy_dataset(4, 1, 64, seed).unwrap().pop().unwrap()
}

#[test]
fn identity_augmentation_only_subtracts_mean() {
    let s = sample(3);
    let cfg = AugmentConfig {
        flip_probability: 0.0,
        mean: [0.1, 0.2, 0.3],
        scales: vec![1.0],
        crop: (64, 64),
    };
    let a = augment(&s, &cfg, &mut rng(0)).unwrap();
    assert_eq!(a.label, s.label);
    for c in 0..3 {
        for (x, y) in s.image.plane(0, c).iter().zip(a.image.plane(0, c)) {
            assert_eq!(*y, x - cfg.mean[c]);
        }
    }
}

#[test]
fn flip_twice_is_identity() {
    let s = sample(4);
    assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
    assert_ne!(flip_horizontal(&s), s);
}

#[test]
fn half_scale_label_histogram() {
    let s = sample(5);
    let half = rescale(&s, 0.5).unwrap();
    assert_eq!((half.height(), half.width()), (32, 32));
    // nearest neighbour at half scale samples odd rows and columns
    let mut oracle = [0usize; 256];
    for y in 0..32 {
        for x in 0..32 {
            oracle[s.label.at(0, 2 * y + 1, 2 * x + 1) as usize] += 1;
        }
    }
    assert_eq!(histogram(&half.label), oracle);
    let full = histogram(&s.label);
    for v in 0..256 {
        let before = full[v] as f64 / 4096.0;
        let after = oracle[v] as f64 / 1024.0;
        assert!((before - after).abs() < 0.05, "class {v}: {before} vs {after}");
    }
}

#[test]
fn crop_shortfall_pads_with_ignore() {
    let s = sample(6);
    let cfg = AugmentConfig {
        flip_probability: 0.0,
        mean: [0.0; 3],
        scales: vec![0.5],
        crop: (64, 64),
    };
    let a = augment(&s, &cfg, &mut rng(1)).unwrap();
    assert_eq!(a.image.shape(), [1, 3, 64, 64]);
    let ignored = a.label.data().iter().filter(|&&v| v == IGNORE_INDEX).count();
    assert!(ignored >= 64 * 64 - 32 * 32);
    assert!(a.label.data().iter().all(|&v| v < 4 || v == IGNORE_INDEX));
    // padded pixels are zero in every channel
    let zero_px = (0..64 * 64)
        .filter(|&i| (0..3).all(|c| a.image.plane(0, c)[i] == 0.0))
        .count();
    assert!(zero_px >= 64 * 64 - 32 * 32);
}

#[test]
fn augment_rejects_bad_config() {
    let s = sample(7);
    let mut cfg = AugmentConfig::new([0.0; 3], (60, 64));
    assert!(augment(&s, &cfg, &mut rng(0)).is_err());
    cfg.crop = (64, 64);
    cfg.scales.clear();
    assert!(augment(&s, &cfg, &mut rng(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn augmented_labels_stay_valid(seed in 0u64..10_000, crop in prop::sample::select(vec![16usize, 48, 64, 96])) {
        let s = sample(seed % 7);
        let cfg = AugmentConfig::new([0.4, 0.4, 0.4], (crop, crop));
        let a = augment(&s, &cfg, &mut rng(seed)).unwrap();
        prop_assert_eq!(a.label.shape(), [1, crop, crop]);
        prop_assert!(a.label.data().iter().all(|&v| v < 4 || v == IGNORE_INDEX));
    }
}

#[test]
fn toy_dataset_is_deterministic() {
    let a = gen_toy_dataset::<f32>(3, 5, 32, 7).unwrap();
    let b = gen_toy_dataset::<f32>(3, 5, 32, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, gen_toy_dataset::<f32>(3, 5, 32, 8).unwrap());
    assert!(gen_toy_dataset::<f32>(3, 0, 32, 7).unwrap().is_empty());
    assert!(gen_toy_dataset::<f32>(3, 1, 30, 7).is_err());
}

#[test]
fn toy_dataset_covers_every_class() {
    let data = gen_toy_dataset::<f32>(3, 200, 64, 1).unwrap();
    let mut seen = [false; 3];
    for s in &data {
        s.label.validate(3, IGNORE_INDEX).unwrap();
        for &v in s.label.data() {
            if v < 3 {
                seen[v as usize] = true;
            }
        }
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(seen, [true; 3]);
    let mean = dataset_mean(&data);
    assert!(mean.iter().all(|m| (0.2..0.8).contains(m)));
}

fn no_aug(size: usize, mean: [f64; 3]) -> AugmentConfig {
    AugmentConfig {
        flip_probability: 0.0,
        mean,
        scales: vec![1.0],
        crop: (size, size),
    }
}

#[test]
fn zero_iterations_leave_weights_alone() {
    let data = gen_toy_dataset::<f32>(3, 2, 32, 1).unwrap();
    let mut net = Network::<f32>::new(VariantSpec::toy(3), 1).unwrap();
    let before = net.clone();
    let cfg = TrainConfig::toy(0, 32, 1, [0.0; 3]);
    let history = train(&mut net, &data, &cfg, |_| {}).unwrap();
    assert!(history.records.is_empty());
    assert_eq!(history.to_csv(), "iter,lr,loss\n");
    for ((_, a), (_, b)) in net.store().iter().zip(before.store().iter()) {
        assert_eq!(a.value(), b.value());
    }
}

#[test]
fn overfits_one_sample() {
    let data = gen_toy_dataset::<f32>(3, 1, 64, 11).unwrap();
    let mean = dataset_mean(&data);
    let mut net = Network::<f32>::new(VariantSpec::toy(3), 2).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        augment: no_aug(64, mean),
        ..TrainConfig::toy(300, 64, 2, mean)
    };
    let history = train(&mut net, &data, &cfg, |_| {}).unwrap();
    let best = history.losses().into_iter().fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best loss {best}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn loss_decreases_and_history_is_reproducible() {
    let data = gen_toy_dataset::<f32>(3, 16, 32, 3).unwrap();
    let mean = dataset_mean(&data);
    let run = || {
        let mut net = Network::<f32>::new(VariantSpec::toy(3), 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::toy(60, 32, 3, mean)
        };
        train(&mut net, &data, &cfg, |_| {}).unwrap()
    };
    let a = run();
    let losses = a.losses();
    assert_eq!(losses.len(), 60);
    assert!(median(losses[54..].to_vec()) < median(losses[..6].to_vec()));
    assert_eq!(a.records[0].lr, 5e-4);
    assert!(a.records.windows(2).all(|w| w[0].lr >= w[1].lr));
    let csv = a.to_csv();
    assert!(csv.starts_with("iter,lr,loss\n0,5e-4,"));
    assert_eq!(csv.lines().count(), 61);
    assert!(!csv.contains('\r'));
    assert_eq!(run().to_csv(), csv);
}

#[test]
fn non_finite_loss_reports_iteration() {
    let mut data = gen_toy_dataset::<f32>(3, 1, 32, 1).unwrap();
    data[0].image.data_mut()[5] = f32::NAN;
    let mut net = Network::<f32>::new(VariantSpec::toy(3), 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        augment: no_aug(32, [0.0; 3]),
        ..TrainConfig::toy(3, 32, 1, [0.0; 3])
    };
    let err = train(&mut net, &data, &cfg, |_| {}).unwrap_err();
    assert!(err.to_string().contains("iteration 0"), "{err}");
}

#[test]
fn rejects_labels_beyond_classes() {
    let data = gen_toy_dataset::<f32>(4, 4, 32, 1).unwrap();
    let mut net = Network::<f32>::new(VariantSpec::toy(2), 1).unwrap();
    assert!(train(&mut net, &data, &TrainConfig::toy(1, 32, 1, [0.0; 3]), |_| {}).is_err());
}
