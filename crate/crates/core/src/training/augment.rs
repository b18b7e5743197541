use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::network::{IMAGE_CHANNELS, OUTPUT_STRIDE};
use crate::ops::resize_bilinear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One image (`1×3×h×w`) with its label map (`1×h×w`).
#[derive(Clone, Debug, PartialEq)]
pub struct ToySample<T> {
    pub image: Tensor<T>,
    pub label: LabelMap,
}

impl<T: Scalar> ToySample<T> {
    pub fn new(image: Tensor<T>, label: LabelMap) -> Result<Self> {
        let [n, c, h, w] = image.shape();
        if n != 1 || c != IMAGE_CHANNELS || label.shape() != [1, h, w] {
            return Err(Error::shape(
                "sample",
                format!("image {:?} does not pair with label {:?}", image.shape(), label.shape()),
            ));
        }
        Ok(ToySample { image, label })
    }

    pub fn height(&self) -> usize {
        self.image.h()
    }

    pub fn width(&self) -> usize {
        self.image.w()
    }
}

/// Multi-scale factors used during training.
pub const TRAIN_SCALES: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub mean: [f64; 3],
    pub scales: Vec<f64>,
    pub crop: (usize, usize),
}

impl AugmentConfig {
    pub fn new(mean: [f64; 3], crop: (usize, usize)) -> Self {
        AugmentConfig {
            flip_probability: 0.5,
            mean,
            scales: TRAIN_SCALES.to_vec(),
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.crop;
        if h == 0 || w == 0 || h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::Config(format!("crop {h}×{w} must be positive multiples of {OUTPUT_STRIDE}")));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("scales must be a nonempty list of positive factors".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config("flip probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Flip, subtract the mean, rescale, then crop (or pad) to the crop size.
pub fn augment<T: Scalar, R: Rng + ?Sized>(sample: &ToySample<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<ToySample<T>> {
    cfg.validate()?;
    let mut s = if rng.random_bool(cfg.flip_probability) {
        flip_horizontal(sample)
    } else {
        sample.clone()
    };
    subtract_mean(&mut s.image, cfg.mean);
    let scale = *cfg.scales.choose(rng).expect("validated nonempty");
    let s = rescale(&s, scale)?;
    let (ch, cw) = cfg.crop;
    let oy = offset(s.height(), ch, rng);
    let ox = offset(s.width(), cw, rng);
    Ok(crop_or_pad(&s, cfg.crop, oy, ox))
}

/// Random placement of a window of `crop` within `len` (or of `len` within
/// `crop` when the image is smaller).
fn offset<R: Rng + ?Sized>(len: usize, crop: usize, rng: &mut R) -> isize {
    if len >= crop {
        rng.random_range(0..=len - crop) as isize
    } else {
        -(rng.random_range(0..=crop - len) as isize)
    }
}

pub fn flip_horizontal<T: Scalar>(sample: &ToySample<T>) -> ToySample<T> {
    let [_, c, h, w] = sample.image.shape();
    let image = Tensor::from_fn([1, c, h, w], |[_, ch, y, x]| sample.image.at(0, ch, y, w - 1 - x));
    let mut label = sample.label.clone();
    for y in 0..h {
        for x in 0..w {
            label.set(0, y, x, sample.label.at(0, y, w - 1 - x));
        }
    }
    ToySample { image, label }
}

pub fn subtract_mean<T: Scalar>(image: &mut Tensor<T>, mean: [f64; 3]) {
    let [n, c, h, w] = image.shape();
    let plane = h * w;
    if plane == 0 {
        return;
    }
    for (p, chunk) in image.data_mut().chunks_mut(plane).enumerate().take(n * c) {
        let m = T::of(mean[p % c % IMAGE_CHANNELS]);
        chunk.iter_mut().for_each(|v| *v -= m);
    }
}

/// Bilinear for the image, nearest neighbour for the label; output extents
/// are rounded to the nearest pixel.
pub fn rescale<T: Scalar>(sample: &ToySample<T>, scale: f64) -> Result<ToySample<T>> {
    let (h, w) = (sample.height(), sample.width());
    let oh = ((h as f64 * scale).round() as usize).max(1);
    let ow = ((w as f64 * scale).round() as usize).max(1);
    if (oh, ow) == (h, w) {
        return Ok(sample.clone());
    }
    let image = resize_bilinear(&sample.image, oh, ow)?;
    let mut label = LabelMap::filled([1, oh, ow], 0);
    let near = |i: usize, from: usize, to: usize| (((i as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1);
    for y in 0..oh {
        let sy = near(y, h, oh);
        for x in 0..ow {
            label.set(0, y, x, sample.label.at(0, sy, near(x, w, ow)));
        }
    }
    Ok(ToySample { image, label })
}

/// Window of `crop` whose top-left corner sits at `(oy, ox)` in the source;
/// positions outside the source become zero pixels and ignored labels.
pub fn crop_or_pad<T: Scalar>(sample: &ToySample<T>, crop: (usize, usize), oy: isize, ox: isize) -> ToySample<T> {
    let (ch, cw) = crop;
    let (h, w) = (sample.height() as isize, sample.width() as isize);
    let mut image = Tensor::zeros([1, IMAGE_CHANNELS, ch, cw]);
    let mut label = LabelMap::filled([1, ch, cw], IGNORE_INDEX);
    for y in 0..ch {
        let sy = oy + y as isize;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..cw {
            let sx = ox + x as isize;
            if !(0..w).contains(&sx) {
                continue;
            }
            let (sy, sx) = (sy as usize, sx as usize);
            for c in 0..IMAGE_CHANNELS {
                image.set(0, c, y, x, sample.image.at(0, c, sy, sx));
            }
            label.set(0, y, x, sample.label.at(0, sy, sx));
        }
    }
    ToySample { image, label }
}
