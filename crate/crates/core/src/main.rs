use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use arm_core::arrangement::ShuffleSpec;
use arm_core::data::{self, pgm, LoadedDataset, Split, SynthConfig};
use arm_core::erosion::{albino_maps, cluster_weight_profile, parse_layers, perception_map};
use arm_core::experiments::{self, has_interior_peak, sweep_csv};
use arm_core::model::{BackboneConfig, Model, ModelConfig};
use arm_core::ops::ConvGeometry;
use arm_core::trainer::{self, default_decay, history_csv, Sampler, TrainConfig};
use arm_core::{ArmError, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success, all artifacts written and checks passed
  2  invalid command-line usage
  3  geometry error (kernel larger than padded extent, bad shuffle ratio, ...)
  4  data error (missing file, unknown label, empty class, ...)
  5  I/O or file-format error
  6  configuration or parse error
  7  training diverged or produced non-finite values
  8  an internal check failed
  9  uninitialized state or numerical oracle failure

Set ARM_LAB_THREADS to cap the worker thread count.";

#[derive(Parser)]
#[command(name = "arm-lab", version, about = "Amend Representation Module toolkit", after_help = EXIT_CODES)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-pixel window coverage of a convolution.
    Perception(PerceptionArgs),
    /// Padding contamination after each layer of a convolution stack.
    Erosion(ErosionArgs),
    /// Perception weight of each feature cluster after arrangement.
    Clusters(ClustersArgs),
    /// Generate a synthetic image corpus.
    Synth(SynthArgs),
    /// Train a tiny backbone with an ARM or GAP head.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Accuracy as a function of the de-albino kernel size.
    SweepK(SweepArgs),
    /// Paired ARM-versus-GAP runs over several seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct PerceptionArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    padding: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ErosionArgs {
    /// Layer list `k,s,p;k,s,p;...`.
    #[arg(long)]
    layers: String,
    #[arg(long)]
    extent: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClustersArgs {
    #[arg(long, default_value_t = 512)]
    channels: usize,
    #[arg(long, default_value_t = 7)]
    height: usize,
    #[arg(long, default_value_t = 7)]
    width: usize,
    /// Shuffle ratio; defaults to the largest valid one.
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long, default_value_t = 32)]
    kernel: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    classes: usize,
    /// Samples per class (size of the largest class with --imbalance).
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    extent: usize,
    /// Largest-to-smallest class ratio; classes shrink geometrically.
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HeadKind {
    Arm,
    Gap,
}

#[derive(Args, Clone)]
struct Optim {
    #[arg(long, value_enum, default_value = "plain")]
    sampler: Sampler,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Per-epoch learning-rate multiplier; 0.9 for plain sampling, 0.78 for MRR.
    #[arg(long)]
    decay: Option<f64>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Held-out fraction of every class.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Optim {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            decay: self.decay.unwrap_or_else(|| default_decay(self.sampler)),
            clip_norm: self.clip_norm,
            ..TrainConfig::new(self.sampler, self.epochs, self.seed)
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "arm")]
    head: HeadKind,
    #[command(flatten)]
    optim: Optim,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
#[value(rename_all = "lowercase")]
enum SplitKind {
    Val,
    Train,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset root; a synthetic corpus is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min: usize,
    #[arg(long, default_value_t = 7)]
    max: usize,
    /// Images per class of the generated corpus.
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[command(flatten)]
    optim: Optim,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset root; an imbalanced synthetic corpus is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[command(flatten)]
    optim: Optim,
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ArmError::io(path, e))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| ArmError::io(out, e))
}

fn write_manifest(out: &Path, command: &str, config: Value, artifacts: &[&str], extra: Value) -> Result<()> {
    let mut m = json!({
        "tool": "arm-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "artifacts": artifacts,
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
        m.extend(extra);
    }
    write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&m).expect("serializable") + "\n",
    )
}

fn cmd_perception(a: &PerceptionArgs) -> Result<()> {
    let map = perception_map(a.height, a.width, a.kernel, a.stride, a.padding)?;
    prepare(&a.out)?;
    write(&a.out.join("perception.csv"), map.to_csv())?;
    pgm::write(a.out.join("perception.pgm"), &pgm::heatmap(map.width, map.height, &map.as_f64()))?;
    write_manifest(
        &a.out,
        "perception",
        json!({"height": a.height, "width": a.width, "kernel": a.kernel, "stride": a.stride, "padding": a.padding}),
        &["perception.csv", "perception.pgm"],
        json!({"max_count": map.max(), "heatmap_scaling": "linear, per-file max maps to 255"}),
    )
}

fn cmd_erosion(a: &ErosionArgs) -> Result<()> {
    let layers = parse_layers(&a.layers)?;
    let maps = albino_maps(a.extent, a.extent, &layers)?;
    prepare(&a.out)?;
    let mut artifacts = Vec::new();
    for (i, m) in maps.iter().enumerate() {
        let stem = format!("erosion_L{}", i + 1);
        write(&a.out.join(format!("{stem}.csv")), m.to_csv())?;
        pgm::write(a.out.join(format!("{stem}.pgm")), &pgm::heatmap(m.width, m.height, &m.contamination))?;
        artifacts.push(format!("{stem}.csv"));
        artifacts.push(format!("{stem}.pgm"));
    }
    // Depth monotonicity is only defined between consecutive maps of equal extent.
    let mut checks = Vec::new();
    let mut failed = false;
    for (i, pair) in maps.windows(2).enumerate() {
        let status = if (pair[0].height, pair[0].width) != (pair[1].height, pair[1].width) {
            "skipped"
        } else if pair[1].contamination.iter().zip(&pair[0].contamination).all(|(d, s)| d >= s) {
            "pass"
        } else {
            failed = true;
            "fail"
        };
        checks.push(json!({"shallow": i + 1, "deep": i + 2, "deeper_at_least_as_contaminated": status}));
    }
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    write_manifest(
        &a.out,
        "erosion",
        json!({"layers": layers, "extent": a.extent}),
        &names,
        json!({
            "max_contamination": maps.iter().map(|m| m.max()).collect::<Vec<_>>(),
            "monotonicity": checks,
            "heatmap_scaling": "linear, per-file max maps to 255",
        }),
    )?;
    if failed {
        return Err(ArmError::CheckFailed("contamination decreased with depth".into()));
    }
    Ok(())
}

fn cmd_clusters(a: &ClustersArgs) -> Result<()> {
    let shuffle = match a.ratio {
        Some(r) => ShuffleSpec::new(r, a.channels, a.height, a.width)?,
        None => ShuffleSpec::maximal(a.channels, a.height, a.width)?,
    };
    let da = ConvGeometry::shared(a.kernel, a.stride, 0, shuffle.out_channels())?;
    let profile = cluster_weight_profile(&shuffle, &da)?;
    prepare(&a.out)?;
    write(&a.out.join("clusters.csv"), profile.to_csv())?;
    write_manifest(
        &a.out,
        "clusters",
        json!({"channels": a.channels, "height": a.height, "width": a.width, "ratio": shuffle.ratio,
               "kernel": a.kernel, "stride": a.stride}),
        &["clusters.csv"],
        json!({
            "arranged_extent": [shuffle.out_height(), shuffle.out_width()],
            "cluster_size": shuffle.cluster_size(),
            "outer_ring_below_interior": profile.ring_below_interior(),
        }),
    )
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = match a.imbalance {
        Some(ratio) if ratio >= 1.0 => SynthConfig::imbalanced(a.classes, a.per_class, ratio, a.extent, a.seed),
        Some(ratio) => return Err(ArmError::Config(format!("imbalance ratio {ratio} must be >= 1"))),
        None => SynthConfig::balanced(a.classes, a.per_class, a.extent, a.seed),
    };
    let index = data::synth_dataset(&cfg, &a.out)?;
    log::info!("wrote {} images to {}", index.samples.len(), a.out.display());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SplitRecord {
    val_fraction: f64,
    seed: u64,
}

const SPLIT_FILE: &str = "split.json";

fn finish_run(
    out: &Path,
    command: &str,
    config: Value,
    data: &LoadedDataset,
    confusion: &data::ConfusionMatrix,
    metrics_csv: String,
    extra: Value,
) -> Result<()> {
    write(&out.join("metrics.csv"), metrics_csv)?;
    write(&out.join("confusion.csv"), confusion.to_csv(&data.index.classes))?;
    let m = confusion.metrics()?;
    let mut extra = extra;
    extra["weighted_accuracy"] = json!(m.weighted_acc);
    extra["unweighted_accuracy"] = json!(m.unweighted_acc);
    extra["per_class_accuracy"] = json!(m.per_class_acc);
    write_manifest(out, command, config, &["metrics.csv", "confusion.csv", "checkpoint"], extra)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = data::load_dataset(&a.data)?;
    let cfg = a.optim.train_config();
    let split = Split::holdout(&data.index, a.optim.val_fraction, a.optim.seed)?;
    let backbone = BackboneConfig::tiny(data.height, data.width);
    let classes = data.index.num_classes();
    let model_cfg = match a.head {
        HeadKind::Arm => ModelConfig::arm(backbone, classes)?,
        HeadKind::Gap => ModelConfig::gap(backbone, classes),
    };
    let mut model = Model::new(model_cfg.clone(), a.optim.seed)?;
    prepare(&a.out)?;
    let ckpt = a.out.join("checkpoint");
    let report = match trainer::train(&cfg, &data, &split.train, &split.val, &mut model) {
        Ok(r) => r,
        Err(e @ ArmError::Divergence { .. }) => {
            trainer::save_checkpoint(&ckpt, &model, 0, &[], &cfg.adam)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    trainer::save_checkpoint(&ckpt, &model, report.steps, &report.history, &cfg.adam)?;
    let split_rec = SplitRecord {
        val_fraction: a.optim.val_fraction,
        seed: a.optim.seed,
    };
    write(&ckpt.join(SPLIT_FILE), serde_json::to_string_pretty(&split_rec).expect("serializable"))?;
    finish_run(
        &a.out,
        "train",
        json!({"data": a.data, "model": model_cfg, "train": cfg, "val_fraction": a.optim.val_fraction}),
        &data,
        &report.confusion,
        history_csv(&report.history),
        json!({
            "seed": a.optim.seed,
            "steps": report.steps,
            "param_count": model.param_count(),
            "class_counts": data.index.class_counts_report(),
            "evaluated_on": if split.val.is_empty() { "train" } else { "val" },
        }),
    )
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (mut model, manifest) = trainer::load_checkpoint(&a.checkpoint)?;
    let data = data::load_dataset(&a.data)?;
    let split_path = a.checkpoint.join(SPLIT_FILE);
    let rec: SplitRecord = match fs::read(&split_path) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| ArmError::format(&split_path, e.to_string()))?,
        Err(_) => SplitRecord {
            val_fraction: 0.2,
            seed: 1,
        },
    };
    let split = Split::holdout(&data.index, rec.val_fraction, rec.seed)?;
    let indices = match a.split {
        SplitKind::Val if !split.val.is_empty() => split.val,
        SplitKind::Val | SplitKind::Train => split.train,
        SplitKind::All => (0..data.index.samples.len()).collect(),
    };
    let (cm, m) = trainer::evaluate(&mut model, &data, &indices, 256)?;
    prepare(&a.out)?;
    let metrics_csv = format!("samples,WA,UA\n{},{:.9},{:.9}\n", indices.len(), m.weighted_acc, m.unweighted_acc);
    write(&a.out.join("metrics.csv"), metrics_csv)?;
    write(&a.out.join("confusion.csv"), cm.to_csv(&data.index.classes))?;
    write_manifest(
        &a.out,
        "eval",
        json!({"checkpoint": a.checkpoint, "data": a.data, "split": format!("{:?}", a.split).to_lowercase(),
               "val_fraction": rec.val_fraction, "split_seed": rec.seed}),
        &["metrics.csv", "confusion.csv"],
        json!({
            "model": manifest.model,
            "weighted_accuracy": m.weighted_acc,
            "unweighted_accuracy": m.unweighted_acc,
            "per_class_accuracy": m.per_class_acc,
        }),
    )
}

fn load_or_synth(root: &Option<PathBuf>, synth: impl FnOnce() -> SynthConfig) -> Result<(LoadedDataset, Value)> {
    match root {
        Some(r) => Ok((data::load_dataset(r)?, json!({"path": r}))),
        None => {
            let cfg = synth();
            Ok((data::synth_loaded(&cfg)?, json!({"synthetic": cfg})))
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    if a.min == 0 || a.min > a.max {
        return Err(ArmError::Config(format!("kernel range {}..={} is empty or starts at 0", a.min, a.max)));
    }
    let (data, source) = load_or_synth(&a.data, || SynthConfig::balanced(7, a.per_class, 28, a.optim.seed))?;
    let cfg = a.optim.train_config();
    let split = Split::holdout(&data.index, a.optim.val_fraction, a.optim.seed)?;
    let backbone = BackboneConfig::for_sweep(data.height, data.width);
    let ks: Vec<usize> = (a.min..=a.max).collect();
    let rows = experiments::k_sweep(&data, &split, &backbone, &ks, &cfg, a.optim.seed);
    prepare(&a.out)?;
    write(&a.out.join("sweep_k.csv"), sweep_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    write_manifest(
        &a.out,
        "sweep-k",
        json!({"data": source, "backbone": backbone, "train": cfg, "k_min": a.min, "k_max": a.max,
               "val_fraction": a.optim.val_fraction}),
        &["sweep_k.csv"],
        json!({
            "seed": a.optim.seed,
            "backbone_output": backbone.output_shape()?,
            "interior_peak": has_interior_peak(&rows),
            "failed_k": rows.iter().filter(|r| r.error.is_some()).map(|r| r.k).collect::<Vec<_>>(),
        }),
    )?;
    if failed > 0 {
        return Err(ArmError::CheckFailed(format!("{failed} of {} kernel sizes failed to train", rows.len())));
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let (data, source) = load_or_synth(&a.data, || SynthConfig::imbalanced(7, 140, 35.0, 24, a.optim.seed))?;
    let cfg = a.optim.train_config();
    let split = Split::holdout(&data.index, a.optim.val_fraction, a.optim.seed)?;
    let backbone = BackboneConfig::tiny(data.height, data.width);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let report = experiments::paired_comparison(&data, &split, &backbone, &seeds, &cfg)?;
    prepare(&a.out)?;
    write(&a.out.join("compare.csv"), report.to_csv())?;
    write_manifest(
        &a.out,
        "compare",
        json!({"data": source, "backbone": backbone, "train": cfg, "seeds": seeds,
               "val_fraction": a.optim.val_fraction}),
        &["compare.csv"],
        json!({
            "class_counts": data.index.class_counts_report(),
            "mean_delta_wa": report.mean_delta_wa,
            "mean_delta_ua": report.mean_delta_ua,
        }),
    )
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Perception(a) => cmd_perception(a),
        Command::Erosion(a) => cmd_erosion(a),
        Command::Clusters(a) => cmd_clusters(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepK(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = std::env::var("ARM_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, ArmError::Geometry(_) | ArmError::KernelTooLarge { .. }) {
                eprintln!("hint: output extent is (extent + 2*padding - kernel) / stride + 1 and must be >= 1");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
