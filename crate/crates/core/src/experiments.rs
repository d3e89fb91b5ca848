//! Kernel-size sweep and the paired ARM-versus-GAP comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LoadedDataset, Split};
use crate::error::{ArmError, Result};
use crate::model::{BackboneConfig, Model, ModelConfig};
use crate::trainer::{train, TrainConfig};

impl BackboneConfig {
    /// Tiny backbone whose stride-2 blocks stop once the map would drop below 7.
    pub fn for_sweep(height: usize, width: usize) -> Self {
        let mut cfg = Self::tiny(height, width);
        let mut e = height.min(width);
        for s in &mut cfg.strides {
            if e.div_ceil(2) >= 7 {
                e = e.div_ceil(2);
            } else {
                *s = 1;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub val_wa: Option<f64>,
    pub val_ua: Option<f64>,
    pub error: Option<String>,
}

/// Trains one DA-head model per `k` (stride 1, shared kernel, no arrangement).
/// A failing `k` is reported in its row and the sweep continues.
pub fn k_sweep(
    data: &LoadedDataset,
    split: &Split,
    backbone: &BackboneConfig,
    ks: &[usize],
    cfg: &TrainConfig,
    model_seed: u64,
) -> Vec<SweepRow> {
    let classes = data.index.num_classes();
    ks.par_iter()
        .map(|&k| {
            let run = || -> Result<(f64, f64)> {
                let mut model = Model::new(ModelConfig::sweep(backbone.clone(), k, classes), model_seed)?;
                let r = train(cfg, data, &split.train, &split.val, &mut model)?;
                Ok((r.metrics.weighted_acc, r.metrics.unweighted_acc))
            };
            match run() {
                Ok((wa, ua)) => SweepRow {
                    k,
                    val_wa: Some(wa),
                    val_ua: Some(ua),
                    error: None,
                },
                Err(e) => {
                    log::warn!("k={k}: {e}");
                    SweepRow {
                        k,
                        val_wa: None,
                        val_ua: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,val_wa,val_ua,error\n");
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        out.push_str(&format!("{},{},{},{}\n", r.k, fmt(r.val_wa), fmt(r.val_ua), err));
    }
    out
}

/// Whether the best accuracy sits strictly inside the swept range.
pub fn has_interior_peak(rows: &[SweepRow]) -> Option<bool> {
    let ok: Vec<(usize, f64)> = rows.iter().filter_map(|r| Some((r.k, r.val_wa?))).collect();
    if ok.len() < 3 {
        return None;
    }
    let best = ok.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let (first, last) = (ok[0].0, ok[ok.len() - 1].0);
    Some(
        ok.iter()
            .any(|&(k, wa)| wa == best && k != first && k != last),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub arm_wa: f64,
    pub arm_ua: f64,
    pub gap_wa: f64,
    pub gap_ua: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<PairedRun>,
    pub mean_delta_wa: f64,
    pub mean_delta_ua: f64,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,arm_wa,arm_ua,gap_wa,gap_ua,delta_wa,delta_ua\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.seed,
                r.arm_wa,
                r.arm_ua,
                r.gap_wa,
                r.gap_ua,
                r.arm_wa - r.gap_wa,
                r.arm_ua - r.gap_ua
            ));
        }
        out
    }
}

/// Trains an ARM model and a GAP model from every seed on the same data and split.
pub fn paired_comparison(
    data: &LoadedDataset,
    split: &Split,
    backbone: &BackboneConfig,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(ArmError::Config("comparison needs at least one seed".into()));
    }
    let classes = data.index.num_classes();
    let arm_cfg = ModelConfig::arm(backbone.clone(), classes)?;
    let gap_cfg = ModelConfig::gap(backbone.clone(), classes);
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let mut arm = Model::new(arm_cfg.clone(), seed)?;
            let a = train(&run_cfg, data, &split.train, &split.val, &mut arm)?.metrics;
            let mut gap = Model::new(gap_cfg.clone(), seed)?;
            let g = train(&run_cfg, data, &split.train, &split.val, &mut gap)?.metrics;
            Ok(PairedRun {
                seed,
                arm_wa: a.weighted_acc,
                arm_ua: a.unweighted_acc,
                gap_wa: g.weighted_acc,
                gap_ua: g.unweighted_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    Ok(ComparisonReport {
        mean_delta_wa: runs.iter().map(|r| r.arm_wa - r.gap_wa).sum::<f64>() / n,
        mean_delta_ua: runs.iter().map(|r| r.arm_ua - r.gap_ua).sum::<f64>() / n,
        runs,
    })
}
