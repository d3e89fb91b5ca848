//! Desk-scale synthetic corpus.
//!
//! Every image is a shared background blob (the component all classes have in
//! common) plus a class-specific part: an oriented grating and a constellation of
//! three Gaussian spots. Per-sample jitter in phase, amplitude and spot position plus
//! additive noise keep the classes from being trivially identical.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetIndex, LoadedDataset, Sample, LABELS_FILE, MANIFEST_FILE};
use super::pgm::{self, GrayImage};
use super::mrr::epoch_seed;
use crate::error::{ArmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    /// Samples per class; length must equal `classes`.
    pub counts: Vec<usize>,
    pub extent: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub grating_amplitude: f64,
    pub spot_amplitude: f64,
    pub phase_jitter: f64,
    pub position_jitter: f64,
}

impl SynthConfig {
    pub fn balanced(classes: usize, per_class: usize, extent: usize, seed: u64) -> Self {
        SynthConfig {
            classes,
            counts: vec![per_class; classes],
            extent,
            seed,
            noise_std: 0.06,
            grating_amplitude: 0.12,
            spot_amplitude: 0.22,
            phase_jitter: 0.6,
            position_jitter: 1.5,
        }
    }

    /// Class sizes falling geometrically from `largest` to `largest / ratio`.
    pub fn imbalanced(classes: usize, largest: usize, ratio: f64, extent: usize, seed: u64) -> Self {
        let mut cfg = Self::balanced(classes, largest, extent, seed);
        let denom = (classes.max(2) - 1) as f64;
        cfg.counts = (0..classes)
            .map(|c| ((largest as f64) * ratio.powf(-(c as f64) / denom)).round().max(1.0) as usize)
            .collect();
        cfg
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(ArmError::Config("synthetic corpus needs at least 2 classes".into()));
        }
        if self.counts.len() != self.classes {
            return Err(ArmError::Config(format!(
                "{} class counts for {} classes",
                self.counts.len(),
                self.classes
            )));
        }
        if self.extent < 4 {
            return Err(ArmError::Config("image extent must be >= 4".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ClassPattern {
    orientation: f64,
    phase: f64,
    spots: [(f64, f64); 3],
}

fn class_patterns(cfg: &SynthConfig) -> Vec<ClassPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, u64::MAX));
    let e = cfg.extent as f64;
    (0..cfg.classes)
        .map(|c| {
            let mut spots = [(0.0, 0.0); 3];
            for s in &mut spots {
                *s = (rng.random_range(0.2 * e..0.8 * e), rng.random_range(0.2 * e..0.8 * e));
            }
            ClassPattern {
                orientation: PI * c as f64 / cfg.classes as f64,
                phase: rng.random_range(0.0..2.0 * PI),
                spots,
            }
        })
        .collect()
}

fn render(cfg: &SynthConfig, pattern: &ClassPattern, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let e = cfg.extent as f64;
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
    let phase = pattern.phase + rng.random_range(-cfg.phase_jitter..=cfg.phase_jitter);
    let amp = cfg.grating_amplitude * rng.random_range(0.8..1.2);
    let spots: Vec<(f64, f64)> = pattern
        .spots
        .iter()
        .map(|&(y, x)| {
            (
                y + rng.random_range(-cfg.position_jitter..=cfg.position_jitter),
                x + rng.random_range(-cfg.position_jitter..=cfg.position_jitter),
            )
        })
        .collect();
    let (sin_t, cos_t) = pattern.orientation.sin_cos();
    let freq = 3.0 / e;
    let spot_var = 2.0 * (e / 10.0).powi(2);
    let face_var = 2.0 * (0.35 * e).powi(2);
    let mut out = Vec::with_capacity(cfg.extent * cfg.extent);
    for y in 0..cfg.extent {
        for x in 0..cfg.extent {
            let (yf, xf) = (y as f64, x as f64);
            let (dy, dx) = (yf - e / 2.0, xf - e / 2.0);
            let background = 0.3 + 0.25 * (-(dy * dy + dx * dx) / face_var).exp();
            let grating = amp * (2.0 * PI * freq * (xf * cos_t + yf * sin_t) + phase).cos();
            let spot: f64 = spots
                .iter()
                .map(|&(sy, sx)| ((-(yf - sy).powi(2) - (xf - sx).powi(2)) / spot_var).exp())
                .sum::<f64>()
                * cfg.spot_amplitude;
            let v = background + grating + spot + noise.sample(rng);
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Generates the corpus in memory: `(label, pixels)` in class-major order.
pub fn synth_images(cfg: &SynthConfig) -> Result<Vec<(usize, Vec<u8>)>> {
    cfg.validate()?;
    let patterns = class_patterns(cfg);
    let mut out = Vec::with_capacity(cfg.counts.iter().sum());
    for (c, &n) in cfg.counts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, c as u64));
        for _ in 0..n {
            out.push((c, render(cfg, &patterns[c], &mut rng)));
        }
    }
    Ok(out)
}

/// The corpus as an in-memory dataset, identical to what [`synth_dataset`] writes.
pub fn synth_loaded(cfg: &SynthConfig) -> Result<LoadedDataset> {
    let images = synth_images(cfg)?;
    let samples = images
        .iter()
        .enumerate()
        .map(|(i, (label, _))| Sample {
            path: sample_path(*label, i),
            label: *label,
        })
        .collect();
    let index = DatasetIndex::new(cfg.class_names(), samples)?;
    Ok(LoadedDataset {
        index,
        height: cfg.extent,
        width: cfg.extent,
        images: images
            .into_iter()
            .map(|(_, px)| px.into_iter().map(|p| p as f32 / 255.0).collect())
            .collect(),
    })
}

fn sample_path(label: usize, i: usize) -> PathBuf {
    PathBuf::from(format!("images/class{label}_{i:05}.pgm"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub tool: String,
    pub version: String,
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub generator: SynthConfig,
}

/// Writes `images/*.pgm`, `labels.csv` and `manifest.json` under `root`.
pub fn synth_dataset(cfg: &SynthConfig, root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let images = synth_images(cfg)?;
    let img_dir = root.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| ArmError::io(&img_dir, e))?;
    let names = cfg.class_names();
    let mut samples = Vec::with_capacity(images.len());
    let mut labels = String::from("relative_path,label\n");
    for (i, (label, px)) in images.into_iter().enumerate() {
        let rel = sample_path(label, i);
        pgm::write(root.join(&rel), &GrayImage::from_u8(cfg.extent, cfg.extent, px))?;
        labels.push_str(&format!("{},{}\n", rel.display(), names[label]));
        samples.push(Sample { path: rel, label });
    }
    let labels_path = root.join(LABELS_FILE);
    fs::write(&labels_path, labels).map_err(|e| ArmError::io(&labels_path, e))?;
    let manifest = SynthManifest {
        tool: "arm-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        classes: names.clone(),
        counts: cfg.counts.clone(),
        generator: cfg.clone(),
    };
    let manifest_path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("serializable");
    fs::write(&manifest_path, json).map_err(|e| ArmError::io(&manifest_path, e))?;
    DatasetIndex::new(names, samples)
}
