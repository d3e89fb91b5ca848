//! 2-D convolution without bias, forward and backward.
//!
//! Kernel layout is `(out_channels, in_channels, k, k)`. A shared single-channel
//! kernel has shape `(1, 1, k, k)` and is applied to every input channel
//! independently, so the output has as many channels as the input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub shared_single_channel: bool,
}

impl ConvGeometry {
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let g = ConvGeometry {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            shared_single_channel: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// One `k×k×1` kernel applied to each of `channels` channels.
    pub fn shared(kernel: usize, stride: usize, padding: usize, channels: usize) -> Result<Self> {
        let g = ConvGeometry {
            kernel,
            stride,
            padding,
            in_channels: channels,
            out_channels: channels,
            shared_single_channel: true,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(ArmError::geometry("kernel size must be >= 1"));
        }
        if self.stride == 0 {
            return Err(ArmError::geometry("stride must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(ArmError::geometry("channel counts must be >= 1"));
        }
        if self.shared_single_channel && self.in_channels != self.out_channels {
            return Err(ArmError::geometry(format!(
                "shared single-channel kernel maps {} channels to {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// `floor((extent + 2p - k) / s) + 1`, or an error when no window fits.
    pub fn out_extent(&self, extent: usize, axis: &'static str) -> Result<usize> {
        out_extent(extent, self.kernel, self.stride, self.padding, axis)
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        if self.shared_single_channel {
            [1, 1, self.kernel, self.kernel]
        } else {
            [self.out_channels, self.in_channels, self.kernel, self.kernel]
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel_shape().iter().product()
    }

    pub fn fan_in(&self) -> usize {
        let [_, cin, k, _] = self.kernel_shape();
        cin * k * k
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input_shape else {
            return Err(ArmError::geometry(format!(
                "expected rank-4 NCHW input, got shape {input_shape:?}"
            )));
        };
        if *c != self.in_channels {
            return Err(ArmError::geometry(format!(
                "channel dimension: input has {c}, geometry expects {}",
                self.in_channels
            )));
        }
        Ok([
            *n,
            self.out_channels,
            self.out_extent(*h, "height")?,
            self.out_extent(*w, "width")?,
        ])
    }

    fn check_kernel(&self, kernel: &Tensor) -> Result<()> {
        let want = self.kernel_shape();
        if kernel.shape() != want {
            return Err(ArmError::geometry(format!(
                "kernel shape {:?} does not match geometry {:?}",
                kernel.shape(),
                want
            )));
        }
        Ok(())
    }
}

pub fn out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    axis: &'static str,
) -> Result<usize> {
    let padded = extent + 2 * padding;
    if kernel > padded || stride == 0 {
        return Err(ArmError::KernelTooLarge {
            axis,
            extent,
            kernel,
            padding,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Input tap index for output position `o` and kernel offset `kk`, or `None` inside padding.
#[inline]
fn tap(o: usize, kk: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + kk).checked_sub(padding)?;
    (pos < extent).then_some(pos)
}

/// Half-open range of output positions whose tap at kernel offset `kk` lies inside the input.
#[inline]
fn valid_outputs(kk: usize, stride: usize, padding: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if kk >= padding { 0 } else { (padding - kk).div_ceil(stride) };
    let hi = if extent + padding > kk {
        ((extent + padding - 1 - kk) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Kernel slice and input channel feeding output channel `oc` from input channel `ic`.
#[inline]
fn kernel_offset(geom: &ConvGeometry, oc: usize, ic: usize) -> usize {
    let kk = geom.kernel * geom.kernel;
    if geom.shared_single_channel {
        0
    } else {
        (oc * geom.in_channels + ic) * kk
    }
}

#[inline]
fn input_channels_for<'a>(
    geom: &'a ConvGeometry,
    oc: usize,
) -> impl Iterator<Item = usize> + 'a {
    let range = if geom.shared_single_channel {
        oc..oc + 1
    } else {
        0..geom.in_channels
    };
    range
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    geom.validate()?;
    geom.check_kernel(kernel)?;
    let (_, cin, h, w) = input.dims4()?;
    let [n, cout, oh, ow] = geom.output_shape(input.shape())?;
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let kdata = kernel.data();
    let idata = input.data();

    let mut out = vec![0.0f32; n * cout * oh * ow];
    out.par_chunks_mut(cout * oh * ow)
        .enumerate()
        .for_each(|(b, out_b)| {
            let in_b = &idata[b * cin * h * w..(b + 1) * cin * h * w];
            let mut acc = vec![0.0f64; oh * ow];
            for oc in 0..cout {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for ic in input_channels_for(geom, oc) {
                    let kbase = kernel_offset(geom, oc, ic);
                    let plane = &in_b[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..k {
                        let (y0, y1) = valid_outputs(ky, s, p, h, oh);
                        for kx in 0..k {
                            let (x0, x1) = valid_outputs(kx, s, p, w, ow);
                            let kv = kdata[kbase + ky * k + kx] as f64;
                            for oy in y0..y1 {
                                let row = &plane[(oy * s + ky - p) * w..];
                                let arow = &mut acc[oy * ow..(oy + 1) * ow];
                                for ox in x0..x1 {
                                    arow[ox] += kv * row[ox * s + kx - p] as f64;
                                }
                            }
                        }
                    }
                }
                for (o, a) in out_b[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().zip(&acc) {
                    *o = *a as f32;
                }
            }
        });
    Tensor::new(&[n, cout, oh, ow], out)
}

/// Gradients of `⟨grad_out, conv2d_forward(input, kernel)⟩` with respect to input and kernel.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    geom: &ConvGeometry,
) -> Result<(Tensor, Tensor)> {
    geom.validate()?;
    geom.check_kernel(kernel)?;
    let (_, cin, h, w) = input.dims4()?;
    let expected = geom.output_shape(input.shape())?;
    if grad_out.shape() != expected {
        return Err(ArmError::geometry(format!(
            "grad_out shape {:?} does not match forward output shape {expected:?}",
            grad_out.shape()
        )));
    }
    let [n, cout, oh, ow] = expected;
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let kdata = kernel.data();
    let idata = input.data();
    let gdata = grad_out.data();
    let klen = kernel.numel();

    // Per-sample input gradients and kernel-gradient partials; partials are summed in sample order.
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let in_b = &idata[b * cin * h * w..(b + 1) * cin * h * w];
            let g_b = &gdata[b * cout * oh * ow..(b + 1) * cout * oh * ow];
            let mut gin = vec![0.0f64; cin * h * w];
            let mut gk = vec![0.0f64; klen];
            for oc in 0..cout {
                let g_plane = &g_b[oc * oh * ow..(oc + 1) * oh * ow];
                for ic in input_channels_for(geom, oc) {
                    let kbase = kernel_offset(geom, oc, ic);
                    let pbase = ic * h * w;
                    for ky in 0..k {
                        let (y0, y1) = valid_outputs(ky, s, p, h, oh);
                        for kx in 0..k {
                            let (x0, x1) = valid_outputs(kx, s, p, w, ow);
                            let ki = kbase + ky * k + kx;
                            let kv = kdata[ki] as f64;
                            let mut kacc = 0.0f64;
                            for oy in y0..y1 {
                                let ibase = pbase + (oy * s + ky - p) * w;
                                let grow = &g_plane[oy * ow..(oy + 1) * ow];
                                for ox in x0..x1 {
                                    let g = grow[ox] as f64;
                                    let ii = ibase + ox * s + kx - p;
                                    gin[ii] += kv * g;
                                    kacc += in_b[ii] as f64 * g;
                                }
                            }
                            gk[ki] += kacc;
                        }
                    }
                }
            }
            (gin, gk)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(n * cin * h * w);
    let mut grad_kernel = vec![0.0f64; klen];
    for (gin, gk) in per_sample {
        grad_input.extend(gin.into_iter().map(|v| v as f32));
        for (acc, v) in grad_kernel.iter_mut().zip(gk) {
            *acc += v;
        }
    }
    Ok((
        Tensor::new(input.shape(), grad_input)?,
        Tensor::new(kernel.shape(), grad_kernel.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// Same result as [`conv2d_forward`] computed by unrolling windows into columns and
/// multiplying by the flattened kernel matrix.
pub fn conv2d_forward_im2col(
    input: &Tensor,
    kernel: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    geom.validate()?;
    geom.check_kernel(kernel)?;
    let (_, cin, h, w) = input.dims4()?;
    let [n, cout, oh, ow] = geom.output_shape(input.shape())?;
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let cols_per_out = oh * ow;
    let mut out = vec![0.0f32; n * cout * oh * ow];

    // Groups: one per channel for the shared kernel, one spanning all channels otherwise.
    let (groups, group_cin) = if geom.shared_single_channel {
        (cin, 1)
    } else {
        (1, cin)
    };
    let rows = group_cin * k * k;
    let mut cols = vec![0.0f32; rows * cols_per_out];
    for b in 0..n {
        for gidx in 0..groups {
            for ci in 0..group_cin {
                let ic = gidx * group_cin + ci;
                let plane = &input.data()[((b * cin) + ic) * h * w..((b * cin) + ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let r = (ci * k + ky) * k + kx;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                cols[r * cols_per_out + oy * ow + ox] =
                                    match (tap(oy, ky, s, p, h), tap(ox, kx, s, p, w)) {
                                        (Some(iy), Some(ix)) => plane[iy * w + ix],
                                        _ => 0.0,
                                    };
                            }
                        }
                    }
                }
            }
            let (oc_range, krows) = if geom.shared_single_channel {
                (gidx..gidx + 1, 1)
            } else {
                (0..cout, cout)
            };
            debug_assert_eq!(krows * rows, kernel.numel());
            for (kr, oc) in oc_range.enumerate() {
                let krow = &kernel.data()[kr * rows..(kr + 1) * rows];
                let dst = &mut out[((b * cout) + oc) * cols_per_out..((b * cout) + oc + 1) * cols_per_out];
                for (j, d) in dst.iter_mut().enumerate() {
                    let acc: f64 = krow
                        .iter()
                        .enumerate()
                        .map(|(r, &kv)| kv as f64 * cols[r * cols_per_out + j] as f64)
                        .sum();
                    *d = acc as f32;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out)
}

/// Explicitly surrounds every spatial plane with `padding` zeros.
pub fn pad_zeros(input: &Tensor, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut out = Tensor::zeros(&[n, c, ph, pw]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let s = plane * h * w + y * w;
            let d = plane * ph * pw + (y + padding) * pw + padding;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}
