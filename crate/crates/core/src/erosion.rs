//! Padding-erosion analysis.
//!
//! * [`perception_map`] counts how many kernel windows cover each pixel.
//! * [`albino_maps`] measures, layer by layer, what fraction of each output's
//!   receptive mass comes from zero padding. Contamination is defined as
//!   `1 − (masked window sum of clean mass) / (window area)` under all-ones kernels,
//!   composed across layers.
//! * [`cluster_weight_profile`] sums perception counts inside each feature cluster
//!   of an arranged map.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arrangement::ShuffleSpec;
use crate::error::{ArmError, Result};
use crate::ops::conv::{out_extent, ConvGeometry};

/// Kernel, stride and padding of one layer, without channel information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(ArmError::geometry("kernel and stride must be >= 1"));
        }
        Ok(LayerSpec {
            kernel,
            stride,
            padding,
        })
    }
}

/// Parses `"k,s,p;k,s,p;..."`. Errors report the byte offset of the bad field.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut offset = 0;
    for chunk in text.split(';') {
        let chunk_start = offset;
        offset += chunk.len() + 1;
        if chunk.trim().is_empty() {
            return Err(ArmError::Parse {
                position: chunk_start,
                msg: "empty layer".into(),
            });
        }
        let mut fields = Vec::with_capacity(3);
        let mut field_offset = chunk_start;
        for field in chunk.split(',') {
            let value = field.trim().parse::<usize>().map_err(|_| ArmError::Parse {
                position: field_offset,
                msg: format!("expected a non-negative integer, found {:?}", field.trim()),
            })?;
            fields.push(value);
            field_offset += field.len() + 1;
        }
        let [k, s, p] = fields[..] else {
            return Err(ArmError::Parse {
                position: chunk_start,
                msg: format!("layer needs 3 fields k,s,p; found {}", fields.len()),
            });
        };
        layers.push(LayerSpec::new(k, s, p).map_err(|e| ArmError::Parse {
            position: chunk_start,
            msg: e.to_string(),
        })?);
    }
    Ok(layers)
}

/// Number of windows covering each position along one axis.
fn axis_coverage(extent: usize, kernel: usize, stride: usize, padding: usize, axis: &'static str) -> Result<Vec<u32>> {
    let windows = out_extent(extent, kernel, stride, padding, axis)?;
    let mut counts = vec![0u32; extent];
    for o in 0..windows {
        let start = (o * stride) as isize - padding as isize;
        let lo = (start.max(0) as usize).min(extent);
        let hi = ((start + kernel as isize).max(0) as usize).min(extent);
        for c in &mut counts[lo..hi] {
            *c += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerceptionMap {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl PerceptionMap {
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        grid_csv(self.height, self.width, |y, x| self.get(y, x).to_string())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Window-coverage count of every pixel under `(k, s, p)`; padding positions are not in the map.
pub fn perception_map(height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Result<PerceptionMap> {
    LayerSpec::new(kernel, stride, padding)?;
    // Windows form a product grid, so coverage factors into row and column counts.
    let rows = axis_coverage(height, kernel, stride, padding, "height")?;
    let cols = axis_coverage(width, kernel, stride, padding, "width")?;
    let counts = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * c))
        .collect();
    Ok(PerceptionMap {
        height,
        width,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbinoMap {
    pub height: usize,
    pub width: usize,
    /// Fraction in `[0, 1]` of each pixel's receptive mass that came from padding.
    pub contamination: Vec<f64>,
}

impl AlbinoMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.contamination[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.contamination.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        grid_csv(self.height, self.width, |y, x| format!("{:.9}", self.get(y, x)))
    }
}

/// Contamination after each layer in turn: element `L-1` is the map after `L` layers.
pub fn albino_maps(height: usize, width: usize, layers: &[LayerSpec]) -> Result<Vec<AlbinoMap>> {
    if layers.is_empty() {
        return Err(ArmError::geometry("at least one layer is required"));
    }
    // Clean (non-padding) mass per pixel, stored as (numerator, window area) of the last layer.
    let (mut h, mut w) = (height, width);
    let mut mass = vec![1.0f64; h * w];
    let mut maps = Vec::with_capacity(layers.len());
    for layer in layers {
        let (k, s, p) = (layer.kernel, layer.stride, layer.padding);
        let oh = out_extent(h, k, s, p, "height")?;
        let ow = out_extent(w, k, s, p, "width")?;
        let area = (k * k) as f64;
        let mut next = vec![0.0f64; oh * ow];
        let mut contamination = vec![0.0f64; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0f64;
                for ky in 0..k {
                    let Some(y) = (oy * s + ky).checked_sub(p).filter(|&y| y < h) else { continue };
                    for kx in 0..k {
                        let Some(x) = (ox * s + kx).checked_sub(p).filter(|&x| x < w) else { continue };
                        sum += mass[y * w + x];
                    }
                }
                next[oy * ow + ox] = sum / area;
                contamination[oy * ow + ox] = ((area - sum) / area).clamp(0.0, 1.0);
            }
        }
        maps.push(AlbinoMap {
            height: oh,
            width: ow,
            contamination,
        });
        mass = next;
        h = oh;
        w = ow;
    }
    Ok(maps)
}

/// Contamination after all `layers`.
pub fn albino_map(height: usize, width: usize, layers: &[LayerSpec]) -> Result<AlbinoMap> {
    Ok(albino_maps(height, width, layers)?.pop().expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterProfile {
    pub rows: usize,
    pub cols: usize,
    pub cluster_size: usize,
    pub totals: Vec<u64>,
}

impl ClusterProfile {
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.totals[i * self.cols + j]
    }

    pub fn is_outer_ring(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.rows || j + 1 == self.cols
    }

    pub fn outer_ring(&self) -> impl Iterator<Item = u64> + '_ {
        self.cells().filter(|&(i, j)| self.is_outer_ring(i, j)).map(|(i, j)| self.get(i, j))
    }

    pub fn interior(&self) -> impl Iterator<Item = u64> + '_ {
        self.cells().filter(|&(i, j)| !self.is_outer_ring(i, j)).map(|(i, j)| self.get(i, j))
    }

    /// Every outer-ring total is strictly below every interior total.
    /// `None` when the grid has no interior clusters.
    pub fn ring_below_interior(&self) -> Option<bool> {
        let interior_min = self.interior().min()?;
        let ring_max = self.outer_ring().max()?;
        Some(ring_max < interior_min)
    }

    pub fn to_csv(&self) -> String {
        grid_csv(self.rows, self.cols, |i, j| self.get(i, j).to_string())
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| (i, j)))
    }
}

/// Total perception weight of each `r×r` feature cluster of the arranged map under `da`.
pub fn cluster_weight_profile(shuffle: &ShuffleSpec, da: &ConvGeometry) -> Result<ClusterProfile> {
    let r = shuffle.ratio;
    let map = perception_map(shuffle.out_height(), shuffle.out_width(), da.kernel, da.stride, da.padding)?;
    let (rows, cols) = (shuffle.in_height, shuffle.in_width);
    let mut totals = vec![0u64; rows * cols];
    for y in 0..map.height {
        for x in 0..map.width {
            totals[(y / r) * cols + x / r] += map.get(y, x) as u64;
        }
    }
    Ok(ClusterProfile {
        rows,
        cols,
        cluster_size: r,
        totals,
    })
}

fn grid_csv(rows: usize, cols: usize, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::new();
    for y in 0..rows {
        for x in 0..cols {
            if x > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", cell(y, x));
        }
        out.push('\n');
    }
    out
}
