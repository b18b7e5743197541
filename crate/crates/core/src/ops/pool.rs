use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat index of the input element that won. Ties go
/// to the first element in row-major window order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "maxpool2x2",
            format!("spatial extent {h}×{w} is smaller than the 2×2 window"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.numel());
    let x = input.data();
    let dst = out.data_mut();
    let mut k = 0;
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                dst[k] = x[best];
                argmax.push(best);
                k += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: Shape,
) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&src, &v) in argmax.iter().zip(grad_out.data()) {
        g[src] += v;
    }
    grad
}

/// Non-overlapping `factor × factor` mean pooling.
pub fn avgpool<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    if factor == 0 {
        return Err(Error::Config("pooling factor must be positive".into()));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "avgpool",
            format!("extent {h}×{w} is not divisible by factor {factor}"),
        ));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let scale = T::one() / T::of((factor * factor) as f64);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let x = input.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let o = &mut dst[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let orow = &mut o[(y / factor) * ow..(y / factor + 1) * ow];
            for (ox, chunk) in row.chunks_exact(factor).enumerate() {
                orow[ox] += chunk.iter().copied().sum::<T>();
            }
        }
        for v in o.iter_mut() {
            *v *= scale;
        }
    }
    Ok(out)
}

pub fn avgpool_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize, input_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    if factor == 1 {
        return grad_out.clone();
    }
    let (oh, ow) = (h / factor, w / factor);
    let scale = T::one() / T::of((factor * factor) as f64);
    let mut grad = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let dst = grad.data_mut();
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                dst[(p * h + y) * w + x] = g[(p * oh + y / factor) * ow + x / factor] * scale;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_single_window() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn ramp_4x4() {
        // windows of 0..15 row-major: {0,1,4,5} {2,3,6,7} {8,9,12,13} {10,11,14,15}
        let x = Tensor::<f32>::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn constant_and_odd_extents() {
        let x = Tensor::<f32>::full([2, 3, 5, 7], 2.5);
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.shape(), [2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        assert!(maxpool2x2(&Tensor::<f32>::zeros([1, 1, 1, 4])).is_err());
    }

    #[test]
    fn ties_pick_first() {
        let x = Tensor::<f32>::full([1, 1, 2, 2], 1.0);
        let (_, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn avgpool_cases() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool(&x, 2).unwrap().data(), &[2.5]);
        assert_eq!(avgpool(&x, 1).unwrap(), x);
        let c = Tensor::<f32>::full([1, 2, 8, 8], -3.0);
        assert!(avgpool(&c, 4).unwrap().data().iter().all(|&v| v == -3.0));
        assert!(avgpool(&Tensor::<f32>::zeros([1, 1, 6, 6]), 4).is_err());
    }
}
