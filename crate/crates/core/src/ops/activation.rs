use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_alpha<T: Scalar>(input: &Tensor<T>, alpha: &Tensor<T>) -> Result<()> {
    if alpha.numel() != input.c() {
        return Err(Error::shape(
            "prelu",
            format!(
                "alpha has {} values for {} channels",
                alpha.numel(),
                input.c()
            ),
        ));
    }
    Ok(())
}

/// Channel-wise PReLU: `x` where `x >= 0`, `alpha[c] * x` elsewhere.
pub fn prelu<T: Scalar>(input: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    check_alpha(input, alpha)?;
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let mut out = input.clone();
    let a = alpha.data();
    for (p, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate().take(n * c) {
        let slope = a[p % c];
        for v in chunk {
            if *v < T::zero() {
                *v *= slope;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_alpha)`.
pub fn prelu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    alpha: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_alpha(input, alpha)?;
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let mut grad_in = grad_out.clone();
    let mut grad_alpha = vec![T::zero(); c];
    let a = alpha.data();
    let x = input.data();
    if plane > 0 {
        for (p, chunk) in grad_in.data_mut().chunks_mut(plane).enumerate().take(n * c) {
            let ch = p % c;
            let xs = &x[p * plane..(p + 1) * plane];
            for (g, &xv) in chunk.iter_mut().zip(xs) {
                if xv < T::zero() {
                    grad_alpha[ch] += *g * xv;
                    *g *= a[ch];
                }
            }
        }
    }
    Ok((grad_in, Tensor::vector(grad_alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_passes_negative_scales() {
        let x = Tensor::<f32>::from_vec([1, 2, 1, 2], vec![3.0, -2.0, -2.0, 0.0]).unwrap();
        let a = Tensor::vector(vec![0.25, 0.5]);
        let y = prelu(&x, &a).unwrap();
        assert_eq!(y.data(), &[3.0, -0.5, -1.0, 0.0]);
    }

    #[test]
    fn alpha_gradient_is_input_on_negative_side() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 1], vec![-2.0]).unwrap();
        let a = Tensor::vector(vec![0.25]);
        let g = Tensor::full([1, 1, 1, 1], 1.0);
        let (gi, ga) = prelu_backward(&g, &x, &a).unwrap();
        assert_eq!(ga.data(), &[-2.0]);
        assert_eq!(gi.data(), &[0.25]);

        // central difference on alpha
        let h = 1e-3;
        let f = |alpha: f64| prelu(&x, &Tensor::vector(vec![alpha])).unwrap().data()[0];
        let fd = (f(0.25 + h) - f(0.25 - h)) / (2.0 * h);
        assert!(((fd - -2.0) / 2.0).abs() < 1e-4);
    }

    #[test]
    fn alpha_length_checked() {
        let x = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert!(prelu(&x, &Tensor::vector(vec![0.1, 0.2])).is_err());
    }
}
