mod common;

use std::fs;

use arm_core::data::{load_dataset, load_index, synth_dataset, synth_loaded, Split, SynthConfig};
use arm_core::ArmError;

use common::nearest_centroid_accuracy;

#[test]
fn written_corpus_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::imbalanced(4, 30, 5.0, 16, 8);
    let written = synth_dataset(&cfg, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let memory = synth_loaded(&cfg).unwrap();
    assert_eq!(loaded.index, written);
    assert_eq!(loaded.index, memory.index);
    assert_eq!(loaded.images, memory.images);
    assert_eq!((loaded.height, loaded.width), (16, 16));
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::balanced(3, 5, 12, 4);
    synth_dataset(&cfg, a.path()).unwrap();
    synth_dataset(&cfg, b.path()).unwrap();
    for name in ["labels.csv", "manifest.json", "images/class2_00014.pgm"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn thousand_file_corpus_matches_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(&SynthConfig::imbalanced(8, 400, 20.0, 8, 5), dir.path()).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let counts: Vec<usize> = manifest["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let index = load_index(dir.path()).unwrap();
    let files = fs::read_dir(dir.path().join("images")).unwrap().count();
    assert!(files >= 1000, "{files} files");
    assert_eq!(files, counts.iter().sum::<usize>());
    assert_eq!(index.counts(), counts);
}

#[test]
fn unknown_label_names_its_row() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(&SynthConfig::balanced(2, 2, 8, 0), dir.path()).unwrap();
    let labels = dir.path().join("labels.csv");
    let mut text = fs::read_to_string(&labels).unwrap();
    text = text.replacen(",class1\n", ",sad\n", 1);
    fs::write(&labels, text).unwrap();
    match load_index(dir.path()) {
        Err(ArmError::Data(msg)) => assert!(msg.contains("row 4") && msg.contains("sad"), "{msg}"),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn missing_image_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(&SynthConfig::balanced(2, 2, 8, 0), dir.path()).unwrap();
    fs::remove_file(dir.path().join("images/class0_00001.pgm")).unwrap();
    let err = load_index(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn synthetic_classes_are_separable_by_centroids() {
    let data = synth_loaded(&SynthConfig::balanced(7, 200, 32, 1)).unwrap();
    let split = Split::holdout(&data.index, 0.2, 1).unwrap();
    let acc = nearest_centroid_accuracy(&data, &split.train, &split.val);
    assert!(acc > 0.8, "nearest-centroid accuracy {acc}");
}
