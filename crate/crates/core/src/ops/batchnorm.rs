//! Per-channel batch normalization over (N, H, W) with learnable scale and shift.

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnHyper {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for BnHyper {
    fn default() -> Self {
        BnHyper {
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized input before the affine transform.
    pub x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn check_channels(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(ArmError::geometry(format!(
            "channel dimension: input has {c} channels, scale {:?}, shift {:?}",
            scale.shape(),
            shift.shape()
        )));
    }
    Ok((n, c, h * w))
}

pub fn batchnorm_forward(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    mode: Mode,
    stats: &mut RunningStats,
    hyper: BnHyper,
) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, hw) = check_channels(input, scale, shift)?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(ArmError::geometry(format!(
            "channel dimension: running stats do not have {c} channels"
        )));
    }
    let m = n * hw;
    if m == 0 {
        return Err(ArmError::geometry("batchnorm over an empty batch"));
    }
    let x = input.data();
    let mut x_hat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let mut inv_stds = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for b in 0..n {
                    sum += x[plane(b)].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    sq += x[plane(b)]
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
                let mom = hyper.momentum as f64;
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = ((1.0 - mom) * *rm as f64 + mom * mean) as f32;
                let rv = &mut stats.var.data_mut()[ch];
                *rv = ((1.0 - mom) * *rv as f64 + mom * unbiased) as f32;
                (mean, var)
            }
            Mode::Eval => (stats.mean.data()[ch] as f64, stats.var.data()[ch] as f64),
        };
        let inv_std = 1.0 / (var + hyper.eps as f64).sqrt();
        inv_stds.push(inv_std);
        let (g, bt) = (scale.data()[ch] as f64, shift.data()[ch] as f64);
        for b in 0..n {
            for i in plane(b) {
                let xh = (x[i] as f64 - mean) * inv_std;
                x_hat[i] = xh as f32;
                out[i] = (g * xh + bt) as f32;
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BatchNormCache {
            x_hat: Tensor::new(input.shape(), x_hat)?,
            inv_std: inv_stds,
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    scale: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(ArmError::geometry(format!(
            "grad_out shape {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut gin = vec![0.0f32; g.len()];
    let mut gscale = vec![0.0f32; c];
    let mut gshift = vec![0.0f32; c];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for i in idx() {
            sum_g += g[i] as f64;
            sum_gx += g[i] as f64 * xh[i] as f64;
        }
        gscale[ch] = sum_gx as f32;
        gshift[ch] = sum_g as f32;
        let gamma = scale.data()[ch] as f64;
        let inv_std = cache.inv_std[ch];
        for i in idx() {
            gin[i] = match cache.mode {
                Mode::Train => {
                    (gamma * inv_std / m * (m * g[i] as f64 - sum_g - xh[i] as f64 * sum_gx)) as f32
                }
                Mode::Eval => (gamma * inv_std * g[i] as f64) as f32,
            };
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), gin)?,
        Tensor::new(&[c], gscale)?,
        Tensor::new(&[c], gshift)?,
    ))
}

/// Batch normalization layer owning its affine parameters and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub stats: RunningStats,
    pub hyper: BnHyper,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Tensor::ones(&[channels]).requires_grad(),
            shift: Tensor::zeros(&[channels]).requires_grad(),
            stats: RunningStats::new(channels),
            hyper: BnHyper::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        batchnorm_forward(input, &self.scale, &self.shift, mode, &mut self.stats, self.hyper)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor, cache: &BatchNormCache) -> Result<Tensor> {
        let (gi, gs, gb) = batchnorm_backward(grad_out, cache, &self.scale)?;
        self.scale.accumulate_grad(&gs)?;
        self.shift.accumulate_grad(&gb)?;
        Ok(gi)
    }
}
