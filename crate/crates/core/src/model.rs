//! Backbone + head networks trained by [`crate::trainer`].
//!
//! The backbone is a small stack of conv(3×3, padded)–BN–ReLU blocks. Its padded
//! convolutions are what produce eroded borders for the head to deal with.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{ArmCache, ArmConfig, ArmHead};
use crate::error::{ArmError, Result};
use crate::init::kaiming_uniform;
use crate::ops::batchnorm::{BatchNorm, BatchNormCache};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::linear::Linear;
use crate::ops::reduce::{global_avg_pool, global_avg_pool_backward, relu, relu_backward};
use crate::ops::Mode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl BackboneConfig {
    /// Three blocks, all stride 2: a 32×32 image becomes 32×4×4.
    pub fn tiny(height: usize, width: usize) -> Self {
        BackboneConfig {
            in_channels: 1,
            in_height: height,
            in_width: width,
            channels: vec![8, 16, 32],
            strides: vec![2, 2, 2],
        }
    }

    fn geometries(&self) -> Result<Vec<ConvGeometry>> {
        if self.channels.len() != self.strides.len() || self.channels.is_empty() {
            return Err(ArmError::Config(
                "backbone needs one stride per block and at least one block".into(),
            ));
        }
        let mut cin = self.in_channels;
        self.channels
            .iter()
            .zip(&self.strides)
            .map(|(&cout, &s)| {
                let g = ConvGeometry::new(3, s, 1, cin, cout)?;
                cin = cout;
                Ok(g)
            })
            .collect()
    }

    /// Backbone output `(C, H, W)`.
    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (self.in_height, self.in_width);
        for g in self.geometries()? {
            h = g.out_extent(h, "height")?;
            w = g.out_extent(w, "width")?;
        }
        Ok((*self.channels.last().expect("non-empty"), h, w))
    }
}

#[derive(Debug, Clone)]
struct Block {
    geom: ConvGeometry,
    kernel: Tensor,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    bn_cache: BatchNormCache,
    pre_relu: Tensor,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    blocks: Vec<Block>,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let blocks = cfg
            .geometries()?
            .into_iter()
            .map(|geom| Block {
                kernel: kaiming_uniform(&geom.kernel_shape(), geom.fan_in(), rng).requires_grad(),
                bn: BatchNorm::new(geom.out_channels),
                geom,
            })
            .collect();
        cfg.output_shape()?;
        Ok(Backbone { cfg, blocks })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.detach();
        for block in &mut self.blocks {
            let conv = conv2d_forward(&cur, &block.kernel, &block.geom)?;
            let (pre_relu, bn_cache) = block.bn.forward(&conv, mode)?;
            let out = relu(&pre_relu);
            caches.push(BlockCache {
                input: cur,
                bn_cache,
                pre_relu,
            });
            cur = out;
        }
        Ok((cur, caches))
    }

    fn backward(&mut self, caches: &[BlockCache], grad: Tensor) -> Result<()> {
        let mut g = grad;
        for (i, (block, cache)) in self.blocks.iter_mut().zip(caches).enumerate().rev() {
            let g_pre = relu_backward(&g, &cache.pre_relu)?;
            let g_conv = block.bn.backward(&g_pre, &cache.bn_cache)?;
            let (g_in, g_k) = conv2d_backward(&g_conv, &cache.input, &block.kernel, &block.geom)?;
            block.kernel.accumulate_grad(&g_k)?;
            if i == 0 {
                break;
            }
            g = g_in;
        }
        Ok(())
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("backbone.{i}.kernel"), &b.kernel, true));
            out.push((format!("backbone.{i}.bn.scale"), &b.bn.scale, true));
            out.push((format!("backbone.{i}.bn.shift"), &b.bn.shift, true));
            out.push((format!("backbone.{i}.bn.running_mean"), &b.bn.stats.mean, false));
            out.push((format!("backbone.{i}.bn.running_var"), &b.bn.stats.var, false));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("backbone.{i}.kernel"), &mut b.kernel, true));
            out.push((format!("backbone.{i}.bn.scale"), &mut b.bn.scale, true));
            out.push((format!("backbone.{i}.bn.shift"), &mut b.bn.shift, true));
            out.push((format!("backbone.{i}.bn.running_mean"), &mut b.bn.stats.mean, false));
            out.push((format!("backbone.{i}.bn.running_var"), &mut b.bn.stats.var, false));
        }
        out
    }
}

/// Global average pooling followed by a linear classifier.
#[derive(Debug, Clone)]
pub struct GapHead {
    pub fc: Linear,
}

/// Shared single-channel convolution (stride 1, no padding) in place of pooling,
/// then spatial mean and a linear classifier. With `k = 1` this is scaled GAP.
#[derive(Debug, Clone)]
pub struct SweepHead {
    pub geom: ConvGeometry,
    pub kernel: Tensor,
    pub fc: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadConfig {
    Arm(ArmConfig),
    Gap { classes: usize },
    Sweep { kernel: usize, classes: usize },
}

impl HeadConfig {
    pub fn classes(&self) -> usize {
        match self {
            HeadConfig::Arm(c) => c.classes,
            HeadConfig::Gap { classes } | HeadConfig::Sweep { classes, .. } => *classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadConfig::Arm(_) => "arm",
            HeadConfig::Gap { .. } => "gap",
            HeadConfig::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Arm(ArmHead),
    Gap(GapHead),
    Sweep(SweepHead),
}

#[derive(Debug, Clone)]
enum HeadCache {
    Arm(ArmCache),
    Gap { pooled: Tensor, h: usize, w: usize },
    Sweep { input: Tensor, conv_h: usize, conv_w: usize, pooled: Tensor },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Tiny backbone with an ARM head sized to its output.
    pub fn arm(backbone: BackboneConfig, classes: usize) -> Result<Self> {
        let (c, h, w) = backbone.output_shape()?;
        Ok(ModelConfig {
            backbone,
            head: HeadConfig::Arm(ArmConfig::for_backbone(c, h, w, classes)),
        })
    }

    pub fn gap(backbone: BackboneConfig, classes: usize) -> Self {
        ModelConfig {
            backbone,
            head: HeadConfig::Gap { classes },
        }
    }

    pub fn sweep(backbone: BackboneConfig, kernel: usize, classes: usize) -> Self {
        ModelConfig {
            backbone,
            head: HeadConfig::Sweep { kernel, classes },
        }
    }
}

pub struct ModelCache {
    backbone: Vec<BlockCache>,
    head: HeadCache,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub head: Head,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(cfg.backbone.clone(), &mut rng)?;
        let (c, h, w) = cfg.backbone.output_shape()?;
        let head = match cfg.head {
            HeadConfig::Arm(arm) => {
                if (arm.in_channels, arm.in_height, arm.in_width) != (c, h, w) {
                    return Err(ArmError::Config(format!(
                        "ARM head expects {}×{}×{} but the backbone yields {c}×{h}×{w}",
                        arm.in_channels, arm.in_height, arm.in_width
                    )));
                }
                Head::Arm(ArmHead::new(arm, &mut rng)?)
            }
            HeadConfig::Gap { classes } => Head::Gap(GapHead {
                fc: Linear::new(c, classes, &mut rng),
            }),
            HeadConfig::Sweep { kernel, classes } => {
                let geom = ConvGeometry::shared(kernel, 1, 0, c)?;
                geom.output_shape(&[1, c, h, w])?;
                Head::Sweep(SweepHead {
                    kernel: kaiming_uniform(&geom.kernel_shape(), geom.fan_in(), &mut rng)
                        .requires_grad(),
                    geom,
                    fc: Linear::new(c, classes, &mut rng),
                })
            }
        };
        Ok(Model { cfg, backbone, head })
    }

    pub fn classes(&self) -> usize {
        self.cfg.head.classes()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ModelCache)> {
        let (feat, backbone) = self.backbone.forward(x, mode)?;
        let (logits, head) = match &mut self.head {
            Head::Arm(arm) => {
                let (logits, cache) = arm.forward(&feat, mode)?;
                (logits, HeadCache::Arm(cache))
            }
            Head::Gap(gap) => {
                let (_, _, h, w) = feat.dims4()?;
                let pooled = global_avg_pool(&feat)?;
                (gap.fc.forward(&pooled)?, HeadCache::Gap { pooled, h, w })
            }
            Head::Sweep(sweep) => {
                let conv = conv2d_forward(&feat, &sweep.kernel, &sweep.geom)?;
                let (_, _, conv_h, conv_w) = conv.dims4()?;
                let pooled = global_avg_pool(&conv)?;
                let logits = sweep.fc.forward(&pooled)?;
                (
                    logits,
                    HeadCache::Sweep {
                        input: feat,
                        conv_h,
                        conv_w,
                        pooled,
                    },
                )
            }
        };
        Ok((logits, ModelCache { backbone, head }))
    }

    /// Accumulates gradients of every trainable tensor.
    pub fn backward(&mut self, cache: &ModelCache, grad_logits: &Tensor) -> Result<()> {
        let g_feat = match (&mut self.head, &cache.head) {
            (Head::Arm(arm), HeadCache::Arm(c)) => arm.backward(c, grad_logits)?,
            (Head::Gap(gap), HeadCache::Gap { pooled, h, w }) => {
                let g = gap.fc.backward(grad_logits, pooled)?;
                global_avg_pool_backward(&g, *h, *w)?
            }
            (
                Head::Sweep(sweep),
                HeadCache::Sweep {
                    input,
                    conv_h,
                    conv_w,
                    pooled,
                },
            ) => {
                let g = sweep.fc.backward(grad_logits, pooled)?;
                let g_conv = global_avg_pool_backward(&g, *conv_h, *conv_w)?;
                let (g_in, g_k) = conv2d_backward(&g_conv, input, &sweep.kernel, &sweep.geom)?;
                sweep.kernel.accumulate_grad(&g_k)?;
                g_in
            }
            _ => return Err(ArmError::Config("cache does not belong to this head".into())),
        };
        self.backbone.backward(&cache.backbone, g_feat)
    }

    /// Every tensor with its checkpoint name and whether it is trainable.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = self.backbone.named_tensors();
        match &self.head {
            Head::Arm(arm) => out.extend(
                arm.named_tensors()
                    .into_iter()
                    .map(|(n, t, p)| (format!("arm.{n}"), t, p)),
            ),
            Head::Gap(gap) => {
                out.push(("gap.fc.weight".into(), &gap.fc.weight, true));
                out.push(("gap.fc.bias".into(), &gap.fc.bias, true));
            }
            Head::Sweep(s) => {
                out.push(("sweep.kernel".into(), &s.kernel, true));
                out.push(("sweep.fc.weight".into(), &s.fc.weight, true));
                out.push(("sweep.fc.bias".into(), &s.fc.bias, true));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        let mut out = self.backbone.named_tensors_mut();
        match &mut self.head {
            Head::Arm(arm) => out.extend(
                arm.named_tensors_mut()
                    .into_iter()
                    .map(|(n, t, p)| (format!("arm.{n}"), t, p)),
            ),
            Head::Gap(gap) => {
                out.push(("gap.fc.weight".into(), &mut gap.fc.weight, true));
                out.push(("gap.fc.bias".into(), &mut gap.fc.bias, true));
            }
            Head::Sweep(s) => {
                out.push(("sweep.kernel".into(), &mut s.kernel, true));
                out.push(("sweep.fc.weight".into(), &mut s.fc.weight, true));
                out.push(("sweep.fc.bias".into(), &mut s.fc.bias, true));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_tensors_mut()
            .into_iter()
            .filter_map(|(_, t, trainable)| trainable.then_some(t))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, t, _) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn after_step(&mut self) {
        if let Head::Arm(arm) = &mut self.head {
            arm.after_step();
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, _, p)| *p)
            .map(|(_, t, _)| t.numel())
            .sum()
    }

    /// Whether the affinity buffer, if any, has seen a training batch.
    pub fn affinity_initialized(&self) -> Option<bool> {
        match &self.head {
            Head::Arm(arm) => Some(arm.affinity.initialized),
            _ => None,
        }
    }

    pub fn set_affinity_initialized(&mut self, value: bool) {
        if let Head::Arm(arm) = &mut self.head {
            arm.affinity.initialized = value;
        }
    }
}
