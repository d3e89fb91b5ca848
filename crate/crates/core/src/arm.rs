//! The ARM head: arrangement → de-albino convolution → batch norm → channel mean →
//! sharing affinity → fully connected.
//!
//! Sharing affinity splits each representation `f` into a generic part, an
//! exponential moving average of batch means, and the unique residual `f − generic`.
//! The block outputs the residual. In training mode the subtrahend is
//! `λ·F_batch + (1 − λ)·buffer` with `F_batch` inside the gradient graph, so `λ` is
//! learnable; that same value, detached, becomes the new buffer.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrangement::{max_shuffle_ratio, pixel_shuffle, pixel_shuffle_backward, ShuffleSpec};
use crate::error::{ArmError, Result};
use crate::init::kaiming_uniform;
use crate::ops::batchnorm::{BatchNorm, BatchNormCache};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::linear::Linear;
use crate::ops::reduce::{channel_mean, channel_mean_backward};
use crate::ops::Mode;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    /// Backbone output `(C, H, W)`.
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub ratio: usize,
    pub da_kernel: usize,
    pub da_stride: usize,
    pub lambda_init: f32,
    pub lambda_learnable: bool,
    pub classes: usize,
}

impl ArmConfig {
    /// Defaults scaled from the cluster size `r`: kernel `2r`, stride `r/2`.
    pub fn for_backbone(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        let ratio = max_shuffle_ratio(channels);
        ArmConfig {
            in_channels: channels,
            in_height: height,
            in_width: width,
            ratio,
            da_kernel: 2 * ratio,
            da_stride: (ratio / 2).max(1),
            lambda_init: DEFAULT_LAMBDA,
            lambda_learnable: true,
            classes,
        }
    }

    /// 512×7×7 backbone features, seven classes.
    pub fn reference() -> Self {
        Self::for_backbone(512, 7, 7, 7)
    }

    pub fn shuffle(&self) -> Result<ShuffleSpec> {
        ShuffleSpec::new(self.ratio, self.in_channels, self.in_height, self.in_width)
    }

    /// The de-albino convolution never pads.
    pub fn da_geometry(&self) -> Result<ConvGeometry> {
        let shuffle = self.shuffle()?;
        ConvGeometry::shared(self.da_kernel, self.da_stride, 0, shuffle.out_channels())
    }

    /// Spatial extents of the representation after the de-albino block.
    pub fn representation_extent(&self) -> Result<(usize, usize)> {
        let shuffle = self.shuffle()?;
        let g = self.da_geometry()?;
        Ok((
            g.out_extent(shuffle.out_height(), "height")?,
            g.out_extent(shuffle.out_width(), "width")?,
        ))
    }

    pub fn features(&self) -> Result<usize> {
        let (h, w) = self.representation_extent()?;
        Ok(h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 {
            return Err(ArmError::Config("class count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_init) {
            return Err(ArmError::Config(format!(
                "lambda_init {} outside [0, 1]",
                self.lambda_init
            )));
        }
        self.features().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub arrangement: usize,
    pub de_albino: usize,
    pub batchnorm: usize,
    pub mean: usize,
    pub affinity: usize,
    pub fc: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.arrangement + self.de_albino + self.batchnorm + self.mean + self.affinity + self.fc
    }

    pub fn as_array(&self) -> [usize; 6] {
        [self.arrangement, self.de_albino, self.batchnorm, self.mean, self.affinity, self.fc]
    }
}

pub fn arm_param_count(cfg: &ArmConfig) -> Result<ParamBreakdown> {
    let shuffle = cfg.shuffle()?;
    let da = cfg.da_geometry()?;
    Ok(ParamBreakdown {
        arrangement: shuffle.param_count(),
        de_albino: da.param_count(),
        batchnorm: 2 * da.out_channels,
        mean: 0,
        affinity: usize::from(cfg.lambda_learnable),
        fc: (cfg.features()? + 1) * cfg.classes,
    })
}

/// EMA buffer of generic features plus the smoothing factor λ.
#[derive(Debug, Clone)]
pub struct GenericFeatureState {
    pub generic: Tensor,
    /// Shape `[1]`; carries a gradient slot when learnable.
    pub lambda: Tensor,
    pub learnable: bool,
    pub initialized: bool,
}

impl GenericFeatureState {
    pub fn new(height: usize, width: usize, lambda: f32, learnable: bool) -> Self {
        let lam = Tensor::full(&[1], lambda);
        GenericFeatureState {
            generic: Tensor::zeros(&[height, width]),
            lambda: if learnable { lam.requires_grad() } else { lam },
            learnable,
            initialized: false,
        }
    }

    /// A state whose buffer already holds `generic`.
    pub fn with_buffer(generic: Tensor, lambda: f32, learnable: bool) -> Result<Self> {
        let (h, w) = generic.dims2()?;
        let mut s = Self::new(h, w, lambda, learnable);
        s.generic = generic;
        s.initialized = true;
        Ok(s)
    }

    pub fn lambda(&self) -> f32 {
        self.lambda.data()[0]
    }

    /// λ clamped to `[0, 1]`, with a warning when clamping was needed.
    pub fn effective_lambda(&self) -> f32 {
        let raw = self.lambda();
        let clamped = raw.clamp(0.0, 1.0);
        if clamped != raw {
            warn!("smoothing factor {raw} outside [0, 1]; clamped to {clamped}");
        }
        clamped
    }

    pub fn clamp_lambda(&mut self) {
        let v = &mut self.lambda.data_mut()[0];
        *v = v.clamp(0.0, 1.0);
    }

    fn check_shape(&self, features: &Tensor) -> Result<usize> {
        let (n, h, w) = features.dims3()?;
        if [h, w] != self.generic.shape() {
            return Err(ArmError::geometry(format!(
                "representation {h}×{w} does not match generic buffer {:?}",
                self.generic.shape()
            )));
        }
        if n == 0 {
            return Err(ArmError::data("empty batch"));
        }
        Ok(n)
    }

    /// Mean representation of the batch; the first call also seeds the buffer with it.
    pub fn affinity_batch_mean(&mut self, features: &Tensor) -> Result<Tensor> {
        self.check_shape(features)?;
        let mean = batch_mean(features)?;
        if !self.initialized {
            self.generic = mean.clone();
            self.initialized = true;
        }
        Ok(mean)
    }

    /// `generic ← λ·F_batch + (1 − λ)·generic`; returns the new buffer.
    pub fn affinity_update(&mut self, f_batch: &Tensor) -> Result<Tensor> {
        if !self.initialized {
            return Err(ArmError::Uninitialized(
                "generic feature buffer has not seen a batch".into(),
            ));
        }
        if f_batch.shape() != self.generic.shape() {
            return Err(ArmError::geometry(format!(
                "batch mean shape {:?} does not match buffer {:?}",
                f_batch.shape(),
                self.generic.shape()
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda()) {
            self.lambda.data_mut()[0] = self.effective_lambda();
        }
        self.generic = blend(self.lambda(), f_batch, &self.generic);
        Ok(self.generic.clone())
    }
}

fn blend(lambda: f32, f_batch: &Tensor, old: &Tensor) -> Tensor {
    let (l, one_minus) = (lambda as f64, 1.0 - lambda as f64);
    let data = f_batch
        .data()
        .iter()
        .zip(old.data())
        .map(|(&b, &o)| (l * b as f64 + one_minus * o as f64) as f32)
        .collect();
    Tensor::new(f_batch.shape(), data).expect("same shape")
}

/// Elementwise mean over the leading batch axis: `N×H×W → H×W`.
pub fn batch_mean(features: &Tensor) -> Result<Tensor> {
    let (n, h, w) = features.dims3()?;
    if n == 0 {
        return Err(ArmError::data("empty batch"));
    }
    let hw = h * w;
    let x = features.data();
    let data = (0..hw)
        .map(|i| ((0..n).map(|b| x[b * hw + i] as f64).sum::<f64>() / n as f64) as f32)
        .collect();
    Tensor::new(&[h, w], data)
}

#[derive(Debug, Clone)]
pub struct AffinityCache {
    mode: Mode,
    batch: usize,
    lambda: f32,
    lambda_passes_grad: bool,
    /// `F_batch − buffer_before_update`, the derivative of the subtrahend in λ.
    batch_minus_buffer: Tensor,
}

/// Subtracts the generic component. Training mode also advances the EMA buffer.
pub fn affinity_forward(
    state: &mut GenericFeatureState,
    features: &Tensor,
    mode: Mode,
) -> Result<(Tensor, AffinityCache)> {
    let n = state.check_shape(features)?;
    let hw = state.generic.numel();
    match mode {
        Mode::Train => {
            let f_batch = state.affinity_batch_mean(features)?;
            let raw = state.lambda();
            let lambda = state.effective_lambda();
            let old = state.generic.clone();
            let sub = blend(lambda, &f_batch, &old);
            let out = subtract_per_sample(features, &sub, n, hw)?;
            let batch_minus_buffer = Tensor::from_fn(old.shape(), |i| {
                (f_batch.data()[i] as f64 - old.data()[i] as f64) as f32
            });
            state.generic = sub;
            Ok((
                out,
                AffinityCache {
                    mode,
                    batch: n,
                    lambda,
                    lambda_passes_grad: state.learnable && (0.0..=1.0).contains(&raw),
                    batch_minus_buffer,
                },
            ))
        }
        Mode::Eval => {
            if !state.initialized {
                return Err(ArmError::Uninitialized(
                    "evaluation before any training batch updated the generic buffer".into(),
                ));
            }
            let out = subtract_per_sample(features, &state.generic, n, hw)?;
            Ok((
                out,
                AffinityCache {
                    mode,
                    batch: n,
                    lambda: state.lambda(),
                    lambda_passes_grad: false,
                    batch_minus_buffer: Tensor::zeros(state.generic.shape()),
                },
            ))
        }
    }
}

fn subtract_per_sample(features: &Tensor, sub: &Tensor, n: usize, hw: usize) -> Result<Tensor> {
    let mut out = features.detach();
    for b in 0..n {
        for (o, &s) in out.data_mut()[b * hw..(b + 1) * hw].iter_mut().zip(sub.data()) {
            *o -= s;
        }
    }
    Ok(out)
}

/// Gradient with respect to the features; accumulates λ's gradient into `state`.
pub fn affinity_backward(
    state: &mut GenericFeatureState,
    cache: &AffinityCache,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (n, h, w) = grad_out.dims3()?;
    if n != cache.batch || [h, w] != state.generic.shape() {
        return Err(ArmError::geometry("affinity grad_out shape mismatch"));
    }
    let hw = h * w;
    let g = grad_out.data();
    let mut gin = g.to_vec();
    if cache.mode == Mode::Train {
        let col_sum: Vec<f64> = (0..hw)
            .map(|i| (0..n).map(|b| g[b * hw + i] as f64).sum())
            .collect();
        let share = cache.lambda as f64 / n as f64;
        for b in 0..n {
            for i in 0..hw {
                gin[b * hw + i] = (g[b * hw + i] as f64 - share * col_sum[i]) as f32;
            }
        }
        if cache.lambda_passes_grad {
            let dl: f64 = col_sum
                .iter()
                .zip(cache.batch_minus_buffer.data())
                .map(|(&s, &d)| -s * d as f64)
                .sum();
            state.lambda.accumulate_grad(&Tensor::full(&[1], dl as f32))?;
        }
    }
    Tensor::new(grad_out.shape(), gin)
}

/// Intermediate values kept by [`ArmHead::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ArmCache {
    arranged: Tensor,
    bn_cache: BatchNormCache,
    affinity: AffinityCache,
    flat: Tensor,
    /// Shape after each block, in order FA, DA, BN, Mean, Affinity, FC.
    pub trace: Vec<(&'static str, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct ArmHead {
    pub cfg: ArmConfig,
    pub da_kernel: Tensor,
    pub bn: BatchNorm,
    pub affinity: GenericFeatureState,
    pub fc: Linear,
}

impl ArmHead {
    pub fn new<R: Rng + ?Sized>(cfg: ArmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let da = cfg.da_geometry()?;
        let (h, w) = cfg.representation_extent()?;
        Ok(ArmHead {
            cfg,
            da_kernel: kaiming_uniform(&da.kernel_shape(), da.fan_in(), rng).requires_grad(),
            bn: BatchNorm::new(da.out_channels),
            affinity: GenericFeatureState::new(h, w, cfg.lambda_init, cfg.lambda_learnable),
            fc: Linear::new(h * w, cfg.classes, rng),
        })
    }

    pub fn param_count(&self) -> ParamBreakdown {
        ParamBreakdown {
            arrangement: 0,
            de_albino: self.da_kernel.numel(),
            batchnorm: self.bn.param_count(),
            mean: 0,
            affinity: usize::from(self.affinity.learnable),
            fc: self.fc.param_count(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ArmCache)> {
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != (self.cfg.in_channels, self.cfg.in_height, self.cfg.in_width) {
            return Err(ArmError::geometry(format!(
                "backbone features {c}×{h}×{w} do not match ARM config {}×{}×{}",
                self.cfg.in_channels, self.cfg.in_height, self.cfg.in_width
            )));
        }
        let mut trace = Vec::with_capacity(6);
        let arranged = pixel_shuffle(x, self.cfg.ratio)?;
        trace.push(("Arrangement", arranged.shape()[1..].to_vec()));
        let da = conv2d_forward(&arranged, &self.da_kernel, &self.cfg.da_geometry()?)?;
        trace.push(("De-albino", da.shape()[1..].to_vec()));
        let (normed, bn_cache) = self.bn.forward(&da, mode)?;
        trace.push(("BN", normed.shape()[1..].to_vec()));
        let rep = channel_mean(&normed)?;
        trace.push(("Mean", rep.shape()[1..].to_vec()));
        let (amended, affinity) = affinity_forward(&mut self.affinity, &rep, mode)?;
        trace.push(("Affinity", amended.shape()[1..].to_vec()));
        let n = amended.shape()[0];
        let flat = amended.into_shape(&[n, self.fc.in_features()])?;
        let logits = self.fc.forward(&flat)?;
        trace.push(("FC", logits.shape()[1..].to_vec()));
        Ok((
            logits,
            ArmCache {
                arranged,
                bn_cache,
                affinity,
                flat,
                trace,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient for the backbone features.
    pub fn backward(&mut self, cache: &ArmCache, grad_logits: &Tensor) -> Result<Tensor> {
        let g_flat = self.fc.backward(grad_logits, &cache.flat)?;
        let (rh, rw) = self.cfg.representation_extent()?;
        let n = g_flat.shape()[0];
        let g_amended = g_flat.into_shape(&[n, rh, rw])?;
        let g_rep = affinity_backward(&mut self.affinity, &cache.affinity, &g_amended)?;
        let g_normed = channel_mean_backward(&g_rep, self.bn.channels())?;
        let g_da = self.bn.backward(&g_normed, &cache.bn_cache)?;
        let (g_arranged, g_kernel) =
            conv2d_backward(&g_da, &cache.arranged, &self.da_kernel, &self.cfg.da_geometry()?)?;
        self.da_kernel.accumulate_grad(&g_kernel)?;
        pixel_shuffle_backward(&g_arranged, self.cfg.ratio)
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        vec![
            ("da.kernel".into(), &self.da_kernel, true),
            ("bn.scale".into(), &self.bn.scale, true),
            ("bn.shift".into(), &self.bn.shift, true),
            ("bn.running_mean".into(), &self.bn.stats.mean, false),
            ("bn.running_var".into(), &self.bn.stats.var, false),
            ("affinity.lambda".into(), &self.affinity.lambda, self.affinity.learnable),
            ("affinity.generic".into(), &self.affinity.generic, false),
            ("fc.weight".into(), &self.fc.weight, true),
            ("fc.bias".into(), &self.fc.bias, true),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        let learnable = self.affinity.learnable;
        vec![
            ("da.kernel".into(), &mut self.da_kernel, true),
            ("bn.scale".into(), &mut self.bn.scale, true),
            ("bn.shift".into(), &mut self.bn.shift, true),
            ("bn.running_mean".into(), &mut self.bn.stats.mean, false),
            ("bn.running_var".into(), &mut self.bn.stats.var, false),
            ("affinity.lambda".into(), &mut self.affinity.lambda, learnable),
            ("affinity.generic".into(), &mut self.affinity.generic, false),
            ("fc.weight".into(), &mut self.fc.weight, true),
            ("fc.bias".into(), &mut self.fc.bias, true),
        ]
    }

    /// Restores the λ ∈ [0, 1] invariant after an optimizer step.
    pub fn after_step(&mut self) {
        self.affinity.clamp_lambda();
    }
}
