//! Bilinear upsampling by an integer factor, half-pixel (align-corners-false)
//! convention: output pixel `i` samples input coordinate `(i + 0.5) / f - 0.5`,
//! clamped at the low border.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Interpolation taps for one output coordinate: `(lo, hi, weight_of_hi)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Taps for resizing an axis of length `in_len` to `out_len`.
pub(crate) fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be positive".into()));
    }
    let [n, c, h, w] = input.shape();
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    if out.numel() == 0 {
        return Ok(out);
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let x = input.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let o = &mut dst[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let fy = T::of(a.frac);
            let r0 = &src[a.lo * w..(a.lo + 1) * w];
            let r1 = &src[a.hi * w..(a.hi + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let fx = T::of(b.frac);
                let top = r0[b.lo] + (r0[b.hi] - r0[b.lo]) * fx;
                let bottom = r1[b.lo] + (r1[b.hi] - r1[b.lo]) * fx;
                o[oy * ow + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize to an arbitrary `out_h × out_w`, same sampling convention
/// as [`bilinear_upsample`]. No gradient is provided.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if (h == 0 || w == 0) && out_h * out_w > 0 {
        return Err(Error::shape("resize_bilinear", "cannot resize an empty plane"));
    }
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    if out.numel() == 0 {
        return Ok(out);
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let x = input.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let o = &mut dst[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, a) in ty.iter().enumerate() {
            let fy = a.frac;
            for (ox, b) in tx.iter().enumerate() {
                let fx = b.frac;
                let at = |y: usize, x: usize| src[y * w + x].as_f64();
                let top = at(a.lo, b.lo) * (1.0 - fx) + at(a.lo, b.hi) * fx;
                let bottom = at(a.hi, b.lo) * (1.0 - fx) + at(a.hi, b.hi) * fx;
                o[oy * out_w + ox] = T::of(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    factor: usize,
    input_shape: Shape,
) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    if factor == 1 {
        return grad_out.clone();
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut grad = Tensor::zeros(input_shape);
    if grad.numel() == 0 {
        return grad;
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let g = grad_out.data();
    let dst = grad.data_mut();
    for p in 0..n * c {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dst[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            let fy = T::of(a.frac);
            for (ox, b) in tx.iter().enumerate() {
                let fx = T::of(b.frac);
                let v = go[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bottom = v * fy;
                d[a.lo * w + b.lo] += top * (T::one() - fx);
                d[a.lo * w + b.hi] += top * fx;
                d[a.hi * w + b.lo] += bottom * (T::one() - fx);
                d[a.hi * w + b.hi] += bottom * fx;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar closed form of half-pixel linear interpolation along one axis.
    fn interp_1d(values: &[f64], factor: usize, i: usize) -> f64 {
        let n = values.len() as f64;
        let x = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, n - 1.0);
        let i0 = x.floor();
        let i1 = (i0 + 1.0).min(n - 1.0);
        let t = x - i0;
        values[i0 as usize] * (1.0 - t) + values[i1 as usize] * t
    }

    #[test]
    fn resize_agrees_with_integer_upsample() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 7 + y * 3 + x * x) as f64);
        let a = bilinear_upsample(&x, 2).unwrap();
        let b = resize_bilinear(&x, 6, 8).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn halving_averages_pairs() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 4], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let y = resize_bilinear(&x, 1, 2).unwrap();
        assert_eq!(y.data(), &[1.0, 5.0]);
    }

    #[test]
    fn constant_stays_constant() {
        for factor in [1, 2, 3, 8] {
            let x = Tensor::<f32>::full([1, 2, 3, 5], 1.75);
            let y = bilinear_upsample(&x, factor).unwrap();
            assert_eq!(y.shape(), [1, 2, 3 * factor, 5 * factor]);
            assert!(y.data().iter().all(|&v| (v - 1.75).abs() < 1e-6));
        }
    }

    #[test]
    fn one_pixel_by_eight() {
        let x = Tensor::<f32>::full([1, 1, 1, 1], 4.0);
        let y = bilinear_upsample(&x, 8).unwrap();
        assert_eq!(y.shape(), [1, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn two_pixel_row_matches_closed_form() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 8.0]).unwrap();
        let y = bilinear_upsample(&x, 2).unwrap();
        let expected: Vec<f64> = (0..4).map(|i| interp_1d(&[0.0, 8.0], 2, i)).collect();
        assert_eq!(expected, vec![0.0, 2.0, 6.0, 8.0]);
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        assert_eq!(&y.data()[..4], expected.as_slice());
        assert_eq!(&y.data()[4..], expected.as_slice());
    }

    #[test]
    fn separable_against_closed_form() {
        let vals: Vec<f64> = (0..12).map(|v| ((v * 7) % 5) as f64 - 1.5).collect();
        let x = Tensor::<f64>::from_vec([1, 1, 3, 4], vals.clone()).unwrap();
        let f = 3;
        let y = bilinear_upsample(&x, f).unwrap();
        for oy in 0..9 {
            // interpolate each input column at oy, then along x
            let col: Vec<f64> = (0..4)
                .map(|cx| interp_1d(&[vals[cx], vals[4 + cx], vals[8 + cx]], f, oy))
                .collect();
            for ox in 0..12 {
                let want = interp_1d(&col, f, ox);
                assert!((y.at(0, 0, oy, ox) - want).abs() < 1e-12);
            }
        }
    }
}
