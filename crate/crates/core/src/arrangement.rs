//! Feature arrangement: parameter-free sub-pixel rearrangement of channels into space.
//!
//! Input element `(n, c·r² + dy·r + dx, i, j)` moves to output `(n, c, i·r + dy, j·r + dx)`,
//! so every value that sat at spatial site `(i, j)` ends up in the `r×r` feature cluster
//! anchored at `(i·r, j·r)` and relative positions between sites are preserved. Values
//! on the border ring of the input therefore land on the border ring of the output.

use serde::{Deserialize, Serialize};

use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    pub ratio: usize,
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
}

impl ShuffleSpec {
    pub fn new(ratio: usize, in_channels: usize, in_height: usize, in_width: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(ArmError::geometry("shuffle ratio must be >= 1"));
        }
        if in_channels % (ratio * ratio) != 0 {
            return Err(ArmError::geometry(format!(
                "channel dimension: r² = {} does not divide {in_channels}",
                ratio * ratio
            )));
        }
        Ok(ShuffleSpec {
            ratio,
            in_channels,
            in_height,
            in_width,
        })
    }

    /// Spec using the largest admissible ratio for `in_channels`.
    pub fn maximal(in_channels: usize, in_height: usize, in_width: usize) -> Result<Self> {
        Self::new(max_shuffle_ratio(in_channels), in_channels, in_height, in_width)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels / (self.ratio * self.ratio)
    }

    pub fn out_height(&self) -> usize {
        self.in_height * self.ratio
    }

    pub fn out_width(&self) -> usize {
        self.in_width * self.ratio
    }

    /// Side of one feature cluster.
    pub fn cluster_size(&self) -> usize {
        self.ratio
    }

    pub fn param_count(&self) -> usize {
        0
    }
}

/// Largest `r` with `r² | channels`; 1 when no square divisor exceeds 1.
pub fn max_shuffle_ratio(channels: usize) -> usize {
    let mut best = 1;
    let mut r = 1;
    while r * r <= channels {
        if channels % (r * r) == 0 {
            best = r;
        }
        r += 1;
    }
    best
}

pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let spec = ShuffleSpec::new(r, c, h, w)?;
    let oc = spec.out_channels();
    let (oh, ow) = (h * r, w * r);
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for b in 0..n {
        for co in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let plane = &src[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for i in 0..h {
                        let orow = ((b * oc + co) * oh + i * r + dy) * ow;
                        for j in 0..w {
                            out[orow + j * r + dx] = plane[i * w + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, oc, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`]; also its adjoint, hence its backward pass.
pub fn pixel_unshuffle(y: &Tensor, r: usize) -> Result<Tensor> {
    let (n, oc, oh, ow) = y.dims4()?;
    if r == 0 {
        return Err(ArmError::geometry("shuffle ratio must be >= 1"));
    }
    if oh % r != 0 || ow % r != 0 {
        return Err(ArmError::geometry(format!(
            "spatial extents {oh}×{ow} are not divisible by r = {r}"
        )));
    }
    let (h, w) = (oh / r, ow / r);
    let c = oc * r * r;
    let src = y.data();
    let mut out = vec![0.0f32; src.len()];
    for b in 0..n {
        for co in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let plane = (b * c + ci) * h * w;
                    for i in 0..h {
                        let orow = ((b * oc + co) * oh + i * r + dy) * ow;
                        for j in 0..w {
                            out[plane + i * w + j] = src[orow + j * r + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Backward of [`pixel_shuffle`].
pub fn pixel_shuffle_backward(grad_out: &Tensor, r: usize) -> Result<Tensor> {
    pixel_unshuffle(grad_out, r)
}
