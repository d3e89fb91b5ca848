use arm_core::data::{synth_loaded, Split, SynthConfig};
use arm_core::experiments::{k_sweep, sweep_csv};
use arm_core::model::{BackboneConfig, Model, ModelConfig};
use arm_core::trainer::{train, Sampler, TrainConfig};

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        learning_rate: 3e-3,
        ..TrainConfig::new(Sampler::Plain, epochs, seed)
    }
}

#[test]
fn one_by_one_kernel_tracks_global_pooling() {
    let data = synth_loaded(&SynthConfig::balanced(7, 60, 28, 2)).unwrap();
    let split = Split::holdout(&data.index, 0.2, 2).unwrap();
    let backbone = BackboneConfig::for_sweep(28, 28);
    let (mut k1, mut gap) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let c = cfg(12, seed);
        let row = &k_sweep(&data, &split, &backbone, &[1], &c, seed)[0];
        k1.push(row.val_wa.unwrap_or_else(|| panic!("{:?}", row.error)));
        let mut model = Model::new(ModelConfig::gap(backbone.clone(), 7), seed).unwrap();
        gap.push(train(&c, &data, &split.train, &split.val, &mut model).unwrap().metrics.weighted_acc);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let delta = mean(&k1) - mean(&gap);
    assert!(delta.abs() <= 0.02, "k=1 {k1:?} vs GAP {gap:?}");
}

#[test]
fn sweep_rows_follow_kernel_order_and_record_failures() {
    let data = synth_loaded(&SynthConfig::balanced(3, 6, 28, 0)).unwrap();
    let split = Split::holdout(&data.index, 0.34, 0).unwrap();
    let backbone = BackboneConfig::for_sweep(28, 28);
    assert_eq!(backbone.output_shape().unwrap(), (32, 7, 7));
    let ks: Vec<usize> = (1..=8).collect();
    let rows = k_sweep(&data, &split, &backbone, &ks, &cfg(1, 0), 0);
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), ks);
    for r in &rows[..7] {
        assert!(r.error.is_none() && r.val_wa.is_some(), "k={} failed: {:?}", r.k, r.error);
    }
    assert!(rows[7].val_wa.is_none() && rows[7].error.is_some());
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("k,val_wa,val_ua,error\n"));
}
