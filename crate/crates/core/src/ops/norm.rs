//! Batch normalization. Statistics and gradient reductions accumulate in
//! `f64` whatever the element type.

use std::sync::Once;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether normalization layers use batch statistics (and update their
/// running buffers) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel statistics used by one forward pass, saved for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct BnSaved {
    pub mode: Mode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Unbiased batch variance, present in train mode only.
    pub batch_var: Option<Vec<f64>>,
}

static BATCH_OF_ONE: Once = Once::new();

fn check_params<T: Scalar>(input: &Tensor<T>, params: &[(&str, &Tensor<T>)]) -> Result<()> {
    for (name, t) in params {
        if t.numel() != input.c() {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} has {} values for {} channels", t.numel(), input.c()),
            ));
        }
    }
    Ok(())
}

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<(Tensor<T>, BnSaved)> {
    check_params(
        input,
        &[
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ],
    )?;
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let count = n * plane;
    let (mean, inv_std, batch_var) = match mode {
        Mode::Infer => {
            let mean: Vec<f64> = running_mean.data().iter().map(|v| v.as_f64()).collect();
            let inv: Vec<f64> = running_var
                .data()
                .iter()
                .map(|v| 1.0 / (v.as_f64() + cfg.epsilon).sqrt())
                .collect();
            (mean, inv, None)
        }
        Mode::Train => {
            if count == 0 {
                return Err(Error::shape(
                    "batch_norm",
                    "train mode needs at least one element per channel",
                ));
            }
            if n == 1 {
                BATCH_OF_ONE.call_once(|| {
                    log::warn!("batch norm with batch size 1 uses per-instance statistics");
                });
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += input.plane(b, ch).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += input
                        .plane(b, ch)
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = ss;
            }
            let inv: Vec<f64> = var
                .iter()
                .map(|ss| 1.0 / (ss / count as f64 + cfg.epsilon).sqrt())
                .collect();
            let unbiased = var
                .iter()
                .map(|ss| ss / (count.max(2) - 1) as f64)
                .collect();
            (mean, inv, Some(unbiased))
        }
    };
    let mut out = input.clone();
    if plane > 0 {
        for (p, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = p % c;
            let scale = T::of(gamma.data()[ch].as_f64() * inv_std[ch]);
            let shift = T::of(beta.data()[ch].as_f64() - gamma.data()[ch].as_f64() * inv_std[ch] * mean[ch]);
            for v in chunk {
                *v = *v * scale + shift;
            }
        }
    }
    Ok((
        out,
        BnSaved {
            mode,
            mean,
            inv_std,
            batch_var,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BnSaved,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
            for (&g, &x) in grad_out.plane(b, ch).iter().zip(input.plane(b, ch)) {
                let g = g.as_f64();
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * (x.as_f64() - mu) * inv;
            }
        }
    }
    let mut grad_in = Tensor::zeros(input.shape());
    if plane > 0 {
        let g_all = grad_out.data();
        let x_all = input.data();
        for (p, chunk) in grad_in.data_mut().chunks_mut(plane).enumerate() {
            let ch = p % c;
            let gm = gamma.data()[ch].as_f64();
            let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
            let gs = &g_all[p * plane..(p + 1) * plane];
            let xs = &x_all[p * plane..(p + 1) * plane];
            match saved.mode {
                Mode::Infer => {
                    for (d, &g) in chunk.iter_mut().zip(gs) {
                        *d = T::of(gm * inv * g.as_f64());
                    }
                }
                Mode::Train => {
                    let mean_dy = sum_dy[ch] / count;
                    let mean_dy_xhat = sum_dy_xhat[ch] / count;
                    for ((d, &g), &x) in chunk.iter_mut().zip(gs).zip(xs) {
                        let xhat = (x.as_f64() - mu) * inv;
                        *d = T::of(gm * inv * (g.as_f64() - mean_dy - xhat * mean_dy_xhat));
                    }
                }
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::vector(v.into_iter().map(T::of).collect());
    (grad_in, to_t(sum_dy_xhat), to_t(sum_dy))
}

/// Exponential moving average: `running = (1 - m) * running + m * batch`.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    batch_mean: &[f64],
    batch_var: &[f64],
    momentum: f64,
) {
    for (r, &b) in running_mean.data_mut().iter_mut().zip(batch_mean) {
        *r = T::of((1.0 - momentum) * r.as_f64() + momentum * b);
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(batch_var) {
        *r = T::of((1.0 - momentum) * r.as_f64() + momentum * b);
    }
}
