use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean pixel-wise softmax cross-entropy over non-ignored pixels.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / count` on counted pixels and zero elsewhere. With
/// no counted pixels the loss is 0 and the gradient is all zeros.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    ignore: u8,
) -> Result<(f64, Tensor<T>)> {
    let [n, c, h, w] = logits.shape();
    if labels.shape() != [n, h, w] {
        return Err(Error::shape(
            "cross_entropy",
            format!(
                "labels {:?} do not match logits {:?}",
                labels.shape(),
                logits.shape()
            ),
        ));
    }
    labels.validate(c, ignore)?;
    let plane = h * w;
    let count = labels.data().iter().filter(|&&l| l != ignore).count();
    let mut grad = Tensor::zeros(logits.shape());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv_count = 1.0 / count as f64;
    let x = logits.data();
    let g = grad.data_mut();
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; c];
    for b in 0..n {
        for p in 0..plane {
            let label = labels.data()[b * plane + p];
            if label == ignore {
                continue;
            }
            let at = |k: usize| (b * c + k) * plane + p;
            let max = (0..c).map(|k| x[at(k)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, pr) in probs.iter_mut().enumerate() {
                *pr = (x[at(k)].as_f64() - max).exp();
                z += *pr;
            }
            total += z.ln() + max - x[at(label as usize)].as_f64();
            for (k, pr) in probs.iter().enumerate() {
                let onehot = if k == label as usize { 1.0 } else { 0.0 };
                g[at(k)] = T::of((pr / z - onehot) * inv_count);
            }
        }
    }
    Ok((total * inv_count, grad))
}
