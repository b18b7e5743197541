use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Concatenate along the channel axis, preserving input order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = inputs.first() else {
        return Err(Error::shape("concat_channels", "no inputs"));
    };
    let [n, _, h, w] = first.shape();
    for t in inputs {
        let [tn, _, th, tw] = t.shape();
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} is incompatible with {:?}", t.shape(), first.shape()),
            ));
        }
    }
    let c: usize = inputs.iter().map(|t| t.c()).sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c * plane);
    for b in 0..n {
        for t in inputs {
            let len = t.c() * plane;
            data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Split a gradient back into per-input channel blocks.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let mut start = 0;
    let mut parts = Vec::with_capacity(widths.len());
    for &wd in widths {
        parts.push(grad.slice_channels(start, wd)?);
        start += wd;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_input_is_identity() {
        let a = Tensor::<f32>::from_fn([2, 3, 2, 2], |[n, c, y, x]| (n + c + y + x) as f32);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn order_and_round_trip() {
        let a = Tensor::<f32>::full([2, 2, 3, 3], 1.0);
        let b = Tensor::<f32>::from_fn([2, 2, 3, 3], |[n, c, y, x]| (n * 100 + c * 10 + y * 3 + x) as f32);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 4, 3, 3]);
        assert_eq!(cat.slice_channels(0, 2).unwrap(), a);
        assert_eq!(cat.slice_channels(2, 2).unwrap(), b);
        let parts = split_channels(&cat, &[2, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f32>::zeros([1, 2, 3, 4]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn empty_channel_blocks_allowed() {
        let a = Tensor::<f32>::zeros([1, 0, 3, 3]);
        let b = Tensor::<f32>::full([1, 3, 3, 3], 2.0);
        assert_eq!(concat_channels(&[&a, &b]).unwrap(), b);
    }
}
