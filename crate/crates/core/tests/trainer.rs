use arm_core::data::{synth_loaded, LoadedDataset, Split, SynthConfig};
use arm_core::model::{BackboneConfig, Model, ModelConfig};
use arm_core::ops::{softmax_cross_entropy, Mode};
use arm_core::trainer::{
    evaluate, history_csv, load_checkpoint, make_batch, save_checkpoint, train, train_step, AdamState,
    Sampler, TrainConfig,
};
use arm_core::ArmError;

fn arm_model(classes: usize, extent: usize, seed: u64) -> Model {
    Model::new(ModelConfig::arm(BackboneConfig::tiny(extent, extent), classes).unwrap(), seed).unwrap()
}

fn snapshot(model: &Model) -> Vec<(String, Vec<f32>)> {
    model.named_tensors().into_iter().map(|(n, t, _)| (n, t.data().to_vec())).collect()
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        ..TrainConfig::new(Sampler::Plain, epochs, seed)
    }
}

fn three_classes() -> (LoadedDataset, Split) {
    let data = synth_loaded(&SynthConfig::balanced(3, 60, 32, 4)).unwrap();
    let split = Split::holdout(&data.index, 0.2, 4).unwrap();
    (data, split)
}

#[test]
fn one_small_step_lowers_the_loss_on_a_frozen_batch() {
    let data = synth_loaded(&SynthConfig::balanced(3, 8, 32, 0)).unwrap();
    let idx: Vec<usize> = (0..24).collect();
    let (x, labels) = make_batch(&data, &idx).unwrap();
    for seed in 0..20 {
        let mut model = arm_model(3, 32, seed);
        // Prime the affinity buffer so that both loss evaluations see the same state.
        model.forward(&x, Mode::Train).unwrap();
        let before = model.clone();
        let loss = |m: &Model| {
            let mut m = m.clone();
            let (logits, _) = m.forward(&x, Mode::Train).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        };
        let l0 = loss(&before);
        let cfg = quick(1, seed);
        train_step(&mut model, &x, &labels, &mut AdamState::default(), 1e-4, &cfg).unwrap();
        for ((_, t, trainable), (_, old, _)) in model.named_tensors_mut().into_iter().zip(before.named_tensors()) {
            if !trainable {
                t.data_mut().copy_from_slice(old.data());
            }
        }
        let l1 = loss(&model);
        assert!(l1 < l0, "seed {seed}: {l0} -> {l1}");
    }
}

#[test]
fn three_class_corpus_is_learned() {
    let (data, split) = three_classes();
    let mut model = arm_model(3, 32, 1);
    let report = train(&quick(20, 1), &data, &split.train, &split.val, &mut model).unwrap();
    assert!(report.metrics.weighted_acc >= 0.9, "{}", history_csv(&report.history));
    let (_, fit) = evaluate(&mut model, &data, &split.train, 64).unwrap();
    assert!(fit.weighted_acc > 0.95, "train WA {}", fit.weighted_acc);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (data, split) = three_classes();
    let run = |sampler| {
        let mut model = arm_model(3, 32, 2);
        let cfg = TrainConfig { sampler, ..quick(3, 2) };
        let report = train(&cfg, &data, &split.train, &split.val, &mut model).unwrap();
        (history_csv(&report.history), snapshot(&model))
    };
    for sampler in [Sampler::Plain, Sampler::Mrr] {
        let (h1, s1) = run(sampler);
        let (h2, s2) = run(sampler);
        assert_eq!(h1, h2);
        let buffer = |s: &[(String, Vec<f32>)]| {
            s.iter().find(|(n, _)| n.contains("generic")).map(|(_, v)| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>())
        };
        assert!(buffer(&s1).is_some());
        assert_eq!(buffer(&s1), buffer(&s2));
        assert_eq!(s1, s2);
    }
}

#[test]
fn untrained_models_sit_at_chance() {
    let data = synth_loaded(&SynthConfig::balanced(7, 30, 32, 6)).unwrap();
    let all: Vec<usize> = (0..data.index.samples.len()).collect();
    let mut total = 0.0;
    for seed in 0..10 {
        let mut model = Model::new(ModelConfig::gap(BackboneConfig::tiny(32, 32), 7), seed).unwrap();
        total += evaluate(&mut model, &data, &all, 64).unwrap().1.weighted_acc;
    }
    let mean = total / 10.0;
    assert!((mean - 1.0 / 7.0).abs() < 0.07, "mean untrained WA {mean}");
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let (data, split) = three_classes();
    let mut model = arm_model(3, 32, 3);
    let cfg = quick(2, 3);
    let report = train(&cfg, &data, &split.train, &split.val, &mut model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model, report.steps, &report.history, &cfg.adam).unwrap();
    let (mut loaded, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(snapshot(&loaded), snapshot(&model));
    assert_eq!(manifest.history, report.history);
    assert_eq!(manifest.affinity_initialized, Some(true));
    let (cm, m) = evaluate(&mut loaded, &data, &split.val, 17).unwrap();
    assert_eq!(cm, report.confusion);
    assert_eq!(m.weighted_acc, report.metrics.weighted_acc);
    assert_eq!(m.unweighted_acc, report.metrics.unweighted_acc);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let model = arm_model(3, 32, 0);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model, 0, &[], &Default::default()).unwrap();
    let victim = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "ten"))
        .unwrap();
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    assert_eq!(load_checkpoint(dir.path()).unwrap_err().exit_code(), 5);
}

#[test]
fn divergence_restores_the_last_good_model() {
    let (mut data, split) = three_classes();
    data.images[split.train[0]][0] = f32::NAN;
    let mut model = arm_model(3, 32, 4);
    let before = snapshot(&model);
    match train(&quick(2, 4), &data, &split.train, &split.val, &mut model) {
        Err(ArmError::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.history)),
    }
    assert_eq!(snapshot(&model), before);
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let (data, split) = three_classes();
    let mut model = arm_model(4, 32, 0);
    let err = train(&quick(1, 0), &data, &split.train, &split.val, &mut model).unwrap_err();
    assert!(matches!(err, ArmError::Config(_)), "{err}");
}
