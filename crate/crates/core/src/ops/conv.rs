//! Dilated, strided 2-D cross-correlation.
//!
//! The kernels iterate tap by tap and sweep whole output rows, so the inner
//! loop is a contiguous multiply-add for stride 1. Work is split over output
//! channels (forward, weight gradient) or input channels (input gradient);
//! every element is owned by exactly one task, which keeps results bitwise
//! deterministic regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Below this many multiply-adds a convolution runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 16;

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding_h: usize,
    pub padding_w: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" zero padding of
    /// `dilation * (kernel - 1) / 2` on each axis.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        dilation: usize,
    ) -> Self {
        ConvSpec {
            kernel_h,
            kernel_w,
            dilation,
            stride: 1,
            in_channels,
            out_channels,
            padding_h: dilation * (kernel_h.saturating_sub(1)) / 2,
            padding_w: dilation * (kernel_w.saturating_sub(1)) / 2,
            has_bias: false,
        }
    }

    /// Square kernel with explicit stride and symmetric padding.
    pub fn strided(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            dilation: 1,
            stride,
            in_channels,
            out_channels,
            padding_h: padding,
            padding_w: padding,
            has_bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.has_bias = true;
        self
    }

    /// Extent covered by the dilated kernel: `dilation * (k - 1) + 1` per axis.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel_h - 1) + 1,
            self.dilation * (self.kernel_w - 1) + 1,
        )
    }

    pub fn weight_shape(&self) -> Shape {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn bias_count(&self) -> usize {
        if self.has_bias {
            self.out_channels
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("dilation", self.dilation),
            ("stride", self.stride),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("conv {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Output spatial extents: `floor((in + 2 pad - eff) / stride) + 1`, or 0
    /// when the padded input is smaller than the dilated kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (eh, ew) = self.effective_kernel();
        (
            out_len(h, self.padding_h, eh, self.stride),
            out_len(w, self.padding_w, ew, self.stride),
        )
    }
}

fn out_len(len: usize, pad: usize, eff: usize, stride: usize) -> usize {
    let padded = len + 2 * pad;
    if padded < eff {
        0
    } else {
        (padded - eff) / stride + 1
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o * stride + offset < in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let room = in_len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let hi = (hi as usize).min(out_len);
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

fn check_shapes<T: Scalar>(
    input: Shape,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.validate()?;
    if input[1] != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels, spec expects {}",
                input[1], spec.in_channels
            ),
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight shape {:?} does not match spec {:?}",
                weight.shape(),
                spec.weight_shape()
            ),
        ));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) if b.numel() == spec.out_channels => Ok(()),
        (Some(b), true) => Err(Error::shape(
            "conv2d",
            format!(
                "bias has {} elements, expected {}",
                b.numel(),
                spec.out_channels
            ),
        )),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::shape("conv2d", "bias given for a bias-free spec")),
        (None, true) => Err(Error::shape("conv2d", "spec requires a bias tensor")),
    }
}

/// Per-tap offsets for one axis.
#[derive(Clone, Copy)]
struct Axis {
    out_len: usize,
    in_len: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
}

impl Axis {
    #[inline]
    fn offset(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.pad as isize
    }

    #[inline]
    fn range(&self, k: usize) -> (usize, usize) {
        valid_range(self.out_len, self.in_len, self.stride, self.offset(k))
    }

    #[inline]
    fn src(&self, o: usize, k: usize) -> usize {
        (o as isize * self.stride as isize + self.offset(k)) as usize
    }
}

fn axes(spec: &ConvSpec, h: usize, w: usize) -> (Axis, Axis) {
    let (oh, ow) = spec.output_hw(h, w);
    (
        Axis {
            out_len: oh,
            in_len: h,
            stride: spec.stride,
            dilation: spec.dilation,
            pad: spec.padding_h,
        },
        Axis {
            out_len: ow,
            in_len: w,
            stride: spec.stride,
            dilation: spec.dilation,
            pad: spec.padding_w,
        },
    )
}

fn for_each_chunk<T: Send>(
    data: &mut [T],
    chunk: usize,
    parallel: bool,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    if chunk == 0 {
        return;
    }
    if parallel {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Forward convolution. Weights are `(out, in, kh, kw)`, bias `out` values.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_shapes(input.shape(), weight, bias, spec)?;
    let [n, ic, h, w] = input.shape();
    let (ay, ax) = axes(spec, h, w);
    let (oh, ow) = (ay.out_len, ax.out_len);
    let oc = spec.out_channels;
    let mut out = Tensor::zeros([n, oc, oh, ow]);
    let plane_in = h * w;
    let plane_out = oh * ow;
    if out.numel() == 0 {
        return Ok(out);
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let wdata = weight.data();
    let bdata = bias.map(|b| b.data());
    let parallel = plane_out * ic * kh * kw * oc >= PARALLEL_THRESHOLD;
    for b in 0..n {
        let x = &input.data()[b * ic * plane_in..(b + 1) * ic * plane_in];
        let dst = &mut out.data_mut()[b * oc * plane_out..(b + 1) * oc * plane_out];
        for_each_chunk(dst, plane_out, parallel, |o, dst| {
            if let Some(bd) = bdata {
                dst.fill(bd[o]);
            }
            for i in 0..ic {
                let src = &x[i * plane_in..(i + 1) * plane_in];
                for ky in 0..kh {
                    let (oy0, oy1) = ay.range(ky);
                    for kx in 0..kw {
                        let wv = wdata[((o * ic + i) * kh + ky) * kw + kx];
                        let (ox0, ox1) = ax.range(kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = ay.src(oy, ky);
                            let src_row = &src[iy * w..(iy + 1) * w];
                            let dst_row = &mut dst[oy * ow + ox0..oy * ow + ox1];
                            let ix0 = ax.src(ox0, kx);
                            if ax.stride == 1 {
                                for (d, &s) in dst_row.iter_mut().zip(&src_row[ix0..]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (d, &s) in dst_row
                                    .iter_mut()
                                    .zip(src_row[ix0..].iter().step_by(ax.stride))
                                {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Gradient of the convolution with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    input_shape: Shape,
) -> Result<Tensor<T>> {
    let [n, ic, h, w] = input_shape;
    let (ay, ax) = axes(spec, h, w);
    let (oh, ow) = (ay.out_len, ax.out_len);
    let oc = spec.out_channels;
    if grad_out.shape() != [n, oc, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "output gradient {:?} does not match {:?}",
                grad_out.shape(),
                [n, oc, oh, ow]
            ),
        ));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let plane_in = h * w;
    let plane_out = oh * ow;
    if grad_in.numel() == 0 || plane_out == 0 {
        return Ok(grad_in);
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let wdata = weight.data();
    let parallel = plane_out * ic * kh * kw * oc >= PARALLEL_THRESHOLD;
    for b in 0..n {
        let go = &grad_out.data()[b * oc * plane_out..(b + 1) * oc * plane_out];
        let dst = &mut grad_in.data_mut()[b * ic * plane_in..(b + 1) * ic * plane_in];
        for_each_chunk(dst, plane_in, parallel, |i, dst| {
            for o in 0..oc {
                let g = &go[o * plane_out..(o + 1) * plane_out];
                for ky in 0..kh {
                    let (oy0, oy1) = ay.range(ky);
                    for kx in 0..kw {
                        let wv = wdata[((o * ic + i) * kh + ky) * kw + kx];
                        let (ox0, ox1) = ax.range(kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = ay.src(oy, ky);
                            let g_row = &g[oy * ow + ox0..oy * ow + ox1];
                            let ix0 = ax.src(ox0, kx);
                            let d_row = &mut dst[iy * w..(iy + 1) * w];
                            if ax.stride == 1 {
                                for (d, &s) in d_row[ix0..].iter_mut().zip(g_row) {
                                    *d += wv * s;
                                }
                            } else {
                                for (d, &s) in
                                    d_row[ix0..].iter_mut().step_by(ax.stride).zip(g_row)
                                {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    Ok(grad_in)
}

/// Gradient of the convolution with respect to its weights.
pub fn conv2d_grad_weight<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let [n, ic, h, w] = input.shape();
    let (ay, ax) = axes(spec, h, w);
    let (oh, ow) = (ay.out_len, ax.out_len);
    let oc = spec.out_channels;
    if grad_out.shape() != [n, oc, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "output gradient {:?} does not match {:?}",
                grad_out.shape(),
                [n, oc, oh, ow]
            ),
        ));
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut grad_w = Tensor::zeros(spec.weight_shape());
    let plane_in = h * w;
    let plane_out = oh * ow;
    if plane_out == 0 || plane_in == 0 {
        return Ok(grad_w);
    }
    let parallel = n * plane_out * ic * kh * kw * oc >= PARALLEL_THRESHOLD;
    let xdata = input.data();
    let gdata = grad_out.data();
    for_each_chunk(grad_w.data_mut(), ic * kh * kw, parallel, |o, dst| {
        for i in 0..ic {
            for ky in 0..kh {
                let (oy0, oy1) = ay.range(ky);
                for kx in 0..kw {
                    let (ox0, ox1) = ax.range(kx);
                    let mut acc = T::zero();
                    if ox0 < ox1 {
                        let ix0 = ax.src(ox0, kx);
                        for b in 0..n {
                            let x = &xdata[(b * ic + i) * plane_in..(b * ic + i + 1) * plane_in];
                            let g =
                                &gdata[(b * oc + o) * plane_out..(b * oc + o + 1) * plane_out];
                            for oy in oy0..oy1 {
                                let iy = ay.src(oy, ky);
                                let g_row = &g[oy * ow + ox0..oy * ow + ox1];
                                let x_row = &x[iy * w..(iy + 1) * w];
                                if ax.stride == 1 {
                                    for (&gv, &xv) in g_row.iter().zip(&x_row[ix0..]) {
                                        acc += gv * xv;
                                    }
                                } else {
                                    for (&gv, &xv) in
                                        g_row.iter().zip(x_row[ix0..].iter().step_by(ax.stride))
                                    {
                                        acc += gv * xv;
                                    }
                                }
                            }
                        }
                    }
                    dst[(i * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    Ok(grad_w)
}

/// Gradient with respect to the bias: per-channel sum of the output gradient.
pub fn conv2d_grad_bias<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, oc, _, _] = grad_out.shape();
    let mut sums = vec![T::zero(); oc];
    for b in 0..n {
        for (o, s) in sums.iter_mut().enumerate() {
            *s += grad_out.plane(b, o).iter().copied().sum::<T>();
        }
    }
    Tensor::vector(sums)
}
