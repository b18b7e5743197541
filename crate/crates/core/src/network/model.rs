use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::variant::VariantSpec;
use crate::blocks::{inject_input, CfpModule, CfpModuleConfig, ConvUnit, Downsampler, DownsamplerConfig};
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::ops::{BnConfig, ConvSpec, Mode};
use crate::params::{BnUpdate, Forward, ForwardRecord, ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Overall downsampling factor between input and classifier.
pub const OUTPUT_STRIDE: usize = 8;

/// Number of image channels the network consumes.
pub const IMAGE_CHANNELS: usize = 3;

/// A segmentation network and all of its parameters.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    spec: VariantSpec,
    store: ParamStore<T>,
    pub(crate) stem: Vec<ConvUnit>,
    pub(crate) down1: Downsampler,
    pub(crate) cluster1: Vec<CfpModule>,
    pub(crate) down2: Downsampler,
    pub(crate) cluster2: Vec<CfpModule>,
    pub(crate) classifier: ConvUnit,
    input_mean: ParamId,
    bn: BnConfig,
}

impl<T: Scalar> Network<T> {
    /// Builds the network with Kaiming-initialized convolutions drawn from a
    /// generator seeded by `seed`.
    pub fn new(spec: VariantSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let init = spec.init_channels;
        let (w1, w2) = spec.widths;
        let stem = vec![
            ConvUnit::conv_bn_act(&mut store, "stem.1", ConvSpec::strided(IMAGE_CHANNELS, init, 3, 2, 1), &mut rng)?,
            ConvUnit::conv_bn_act(&mut store, "stem.2", ConvSpec::strided(init, init, 3, 1, 1), &mut rng)?,
            ConvUnit::conv_bn_act(&mut store, "stem.3", ConvSpec::strided(init, init, 3, 1, 1), &mut rng)?,
        ];
        let down1 = Downsampler::new(
            &mut store,
            "down1",
            DownsamplerConfig::new(init + IMAGE_CHANNELS, w1)?,
            &mut rng,
        )?;
        let cluster = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, width: usize, rates: &[usize]| {
            rates
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let cfg = CfpModuleConfig::new(width, spec.fp_channels, r)?.with_reduction(spec.reduction);
                    CfpModule::new(store, &format!("{prefix}.{}", i + 1), cfg, rng)
                })
                .collect::<Result<Vec<_>>>()
        };
        let cluster1 = cluster(&mut store, &mut rng, "cfp1", w1, &spec.cluster1_rates)?;
        let down2 = Downsampler::new(
            &mut store,
            "down2",
            DownsamplerConfig::new(w1 + IMAGE_CHANNELS, w2)?,
            &mut rng,
        )?;
        let cluster2 = cluster(&mut store, &mut rng, "cfp2", w2, &spec.cluster2_rates)?;
        let classifier = ConvUnit::plain(
            &mut store,
            "classifier",
            ConvSpec::same(w2 + IMAGE_CHANNELS, spec.classes, 1, 1, 1).with_bias(),
            &mut rng,
        )?;
        let input_mean = store.add(
            "input.mean",
            ParamKind::InputMean,
            Tensor::vector(vec![T::zero(); IMAGE_CHANNELS]),
        );
        Ok(Network {
            spec,
            store,
            stem,
            down1,
            cluster1,
            down2,
            cluster2,
            classifier,
            input_mean,
            bn: BnConfig::default(),
        })
    }

    pub fn spec(&self) -> &VariantSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn bn_config(&self) -> BnConfig {
        self.bn
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn cluster1(&self) -> &[CfpModule] {
        &self.cluster1
    }

    pub fn cluster2(&self) -> &[CfpModule] {
        &self.cluster2
    }

    pub fn classifier(&self) -> &ConvUnit {
        &self.classifier
    }

    /// Per-channel mean subtracted from raw images by [`Network::normalize`].
    pub fn input_mean(&self) -> [f64; 3] {
        let d = self.store.get(self.input_mean).data();
        [d[0].as_f64(), d[1].as_f64(), d[2].as_f64()]
    }

    pub fn set_input_mean(&mut self, mean: [f64; 3]) {
        let t = Tensor::vector(mean.iter().map(|&m| T::of(m)).collect());
        self.store.replace(self.input_mean, t).expect("three channels");
    }

    /// Checks an image shape before any computation.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = shape;
        if c != IMAGE_CHANNELS {
            return Err(Error::shape("network", format!("expected {IMAGE_CHANNELS} image channels, got {c}")));
        }
        if n == 0 || h == 0 || w == 0 || h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::shape(
                "network",
                format!("image extents {h}×{w} must be positive multiples of {OUTPUT_STRIDE}"),
            ));
        }
        Ok(())
    }

    /// Subtracts the stored input mean from every pixel.
    pub fn normalize(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        if image.c() != IMAGE_CHANNELS {
            return Err(Error::shape("normalize", format!("expected {IMAGE_CHANNELS} channels, got {}", image.c())));
        }
        let mean = self.input_mean();
        let mut out = image.clone();
        let plane = image.h() * image.w();
        if plane > 0 {
            for (p, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let m = T::of(mean[p % IMAGE_CHANNELS]);
                chunk.iter_mut().for_each(|v| *v -= m);
            }
        }
        Ok(out)
    }

    /// Per-pixel class scores at input resolution.
    pub fn forward(&self, tape: &mut Tape<T>, image: &Var<T>, mode: Mode) -> Result<(Var<T>, ForwardRecord<T>)> {
        self.check_input(image.shape())?;
        let mut fwd = Forward::new(tape, &self.store, mode);
        let mut x = image.clone();
        for unit in &self.stem {
            x = unit.forward(&mut fwd, &x)?;
        }
        x = inject_input(&mut fwd, &x, image, 2)?;
        x = self.down1.forward(&mut fwd, &x)?;
        for m in &self.cluster1 {
            x = m.forward(&mut fwd, &x)?;
        }
        x = inject_input(&mut fwd, &x, image, 4)?;
        x = self.down2.forward(&mut fwd, &x)?;
        for m in &self.cluster2 {
            x = m.forward(&mut fwd, &x)?;
        }
        x = inject_input(&mut fwd, &x, image, OUTPUT_STRIDE)?;
        x = self.classifier.forward(&mut fwd, &x)?;
        let logits = fwd.tape.upsample_bilinear(&x, OUTPUT_STRIDE)?;
        Ok((logits, fwd.finish()))
    }

    /// Inference-mode forward pass without gradient bookkeeping. The image
    /// must already be normalized.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image.shape())?;
        let mut tape = Tape::no_grad();
        let x = tape.constant(image.clone());
        let (logits, _) = self.forward(&mut tape, &x, Mode::Infer)?;
        let value = logits.shared();
        drop(logits);
        Ok(std::sync::Arc::try_unwrap(value).unwrap_or_else(|a| (*a).clone()))
    }

    /// Normalizes a raw image, runs inference and takes the per-pixel argmax.
    pub fn segment(&self, image: &Tensor<T>) -> Result<LabelMap> {
        self.check_input(image.shape())?;
        Ok(argmax(&self.infer(&self.normalize(image)?)?))
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        self.store.apply_bn_updates(updates, self.bn.momentum);
    }

    /// Parameter ids grouped by top-level layer, in execution order.
    pub fn layer_params(&self) -> Vec<(String, &'static str, Vec<ParamId>)> {
        let mut rows = Vec::new();
        for (i, unit) in self.stem.iter().enumerate() {
            let mut ids = Vec::new();
            unit.collect_params(&mut ids);
            rows.push((format!("stem.{}", i + 1), "3×3 Conv", ids));
        }
        let mut ids = Vec::new();
        self.down1.collect_params(&mut ids);
        rows.push(("down1".to_string(), "Downsampling", ids));
        for (i, m) in self.cluster1.iter().enumerate() {
            let mut ids = Vec::new();
            m.collect_params(&mut ids);
            rows.push((format!("cfp1.{}", i + 1), "CFP", ids));
        }
        let mut ids = Vec::new();
        self.down2.collect_params(&mut ids);
        rows.push(("down2".to_string(), "Downsampling", ids));
        for (i, m) in self.cluster2.iter().enumerate() {
            let mut ids = Vec::new();
            m.collect_params(&mut ids);
            rows.push((format!("cfp2.{}", i + 1), "CFP", ids));
        }
        let mut ids = Vec::new();
        self.classifier.collect_params(&mut ids);
        rows.push(("classifier".to_string(), "1×1 Conv", ids));
        rows.push(("input".to_string(), "Input mean", vec![self.input_mean]));
        rows
    }
}

/// Per-pixel index of the largest score; ties go to the lowest class.
pub fn argmax<T: Scalar>(logits: &Tensor<T>) -> LabelMap {
    let [n, c, h, w] = logits.shape();
    let plane = h * w;
    let mut out = vec![0u8; n * plane];
    let data = logits.data();
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = data[base + p];
            for k in 1..c {
                let v = data[base + k * plane + p];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            out[b * plane + p] = best as u8;
        }
    }
    LabelMap::new([n, h, w], out).expect("sized to fit")
}
