//! Synthetic scenes: coloured shapes on a textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::augment::ToySample;
use crate::color::{golden_hue, hsv_to_rgb};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::network::OUTPUT_STRIDE;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sub-pixel samples per axis used to measure shape coverage.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Triangle { a: (f64, f64), b: (f64, f64), c: (f64, f64) },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            Shape::Triangle { a, b, c } => {
                let cross = |p: (f64, f64), q: (f64, f64)| (q.1 - p.1) * (y - p.0) - (q.0 - p.0) * (x - p.1);
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    /// Fraction of the pixel at `(py, px)` inside the shape.
    fn coverage(&self, py: usize, px: usize) -> f64 {
        let mut inside = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                inside += self.contains(y, x) as usize;
            }
        }
        inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    fn random<R: Rng + ?Sized>(kind: usize, size: f64, rng: &mut R) -> Shape {
        let r_lo = size / 8.0;
        let r_hi = size / 4.0;
        let cy = rng.random_range(0.15 * size..0.85 * size);
        let cx = rng.random_range(0.15 * size..0.85 * size);
        match kind % 3 {
            0 => Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(r_lo..r_hi),
                rx: rng.random_range(r_lo..r_hi),
            },
            1 => {
                let hy = rng.random_range(r_lo..r_hi);
                let hx = rng.random_range(r_lo..r_hi);
                Shape::Rect {
                    y0: cy - hy,
                    x0: cx - hx,
                    y1: cy + hy,
                    x1: cx + hx,
                }
            }
            _ => {
                let r = rng.random_range(1.2 * r_lo..1.2 * r_hi);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let vertex = |k: f64| {
                    let a = phase + k * std::f64::consts::TAU / 3.0;
                    (cy + r * a.sin(), cx + r * a.cos())
                };
                Shape::Triangle {
                    a: vertex(0.0),
                    b: vertex(1.0),
                    c: vertex(2.0),
                }
            }
        }
    }
}

/// Base colour of shape class `class` (`class >= 1`).
fn class_color(class: usize) -> [f64; 3] {
    hsv_to_rgb(golden_hue(class - 1), 0.75, 0.9)
}

/// Deterministic synthetic dataset. Class 0 is the textured background;
/// classes `1..classes` are shapes (ellipses, rectangles and triangles in
/// rotation) with class-specific colours. Pixels only partly covered by a
/// shape are blended and labelled with the ignore index. Sample `i` always
/// contains class `1 + i mod (classes − 1)`.
pub fn gen_toy_dataset<T: Scalar>(classes: usize, count: usize, size: usize, seed: u64) -> Result<Vec<ToySample<T>>> {
    if size == 0 || !size.is_multiple_of(OUTPUT_STRIDE) {
        return Err(Error::Config(format!("toy size {size} must be a positive multiple of {OUTPUT_STRIDE}")));
    }
    if !(1..=255).contains(&classes) {
        return Err(Error::Config(format!("{classes} classes is outside 1..=255")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| gen_sample(classes, size, i, &mut rng)).collect()
}

fn gen_sample<T: Scalar, R: Rng + ?Sized>(classes: usize, size: usize, index: usize, rng: &mut R) -> Result<ToySample<T>> {
    let noise = Normal::new(0.0, 0.03).expect("valid deviation");
    let mut rgb = vec![[0.0f64; 3]; size * size];
    let mut label = vec![0u8; size * size];

    let gray = rng.random_range(0.3..0.6);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let (fy, fx) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let (py, px) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    for y in 0..size {
        for x in 0..size {
            let tex = 0.08 * (fy * y as f64 + py).sin() * (fx * x as f64 + px).sin();
            rgb[y * size + x] = std::array::from_fn(|c| gray + tint[c] + tex);
        }
    }

    if classes > 1 {
        let shapes = rng.random_range(1..=3usize);
        for s in 0..shapes {
            let class = if s == 0 {
                1 + index % (classes - 1)
            } else {
                rng.random_range(1..classes)
            };
            let shape = Shape::random(class - 1, size as f64, rng);
            let base = class_color(class);
            let color: [f64; 3] = std::array::from_fn(|c| base[c] + rng.random_range(-0.08..0.08));
            for y in 0..size {
                for x in 0..size {
                    let cov = shape.coverage(y, x);
                    if cov == 0.0 {
                        continue;
                    }
                    let p = &mut rgb[y * size + x];
                    for c in 0..3 {
                        p[c] = cov * color[c] + (1.0 - cov) * p[c];
                    }
                    label[y * size + x] = if cov == 1.0 { class as u8 } else { IGNORE_INDEX };
                }
            }
        }
    }

    let mut image = Tensor::zeros([1, 3, size, size]);
    for y in 0..size {
        for x in 0..size {
            for (c, &base) in rgb[y * size + x].iter().enumerate() {
                let v = (base + noise.sample(rng)).clamp(0.0, 1.0);
                image.set(0, c, y, x, T::of(v));
            }
        }
    }
    ToySample::new(image, LabelMap::new([1, size, size], label)?)
}

/// Per-channel mean pixel value over a dataset.
pub fn dataset_mean<T: Scalar>(samples: &[ToySample<T>]) -> [f64; 3] {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for s in samples {
        for (c, acc) in sum.iter_mut().enumerate() {
            *acc += s.image.plane(0, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        count += s.height() * s.width();
    }
    if count == 0 {
        return [0.0; 3];
    }
    sum.map(|v| v / count as f64)
}
