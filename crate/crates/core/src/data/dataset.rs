use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pgm;
use crate::error::{ArmError, Result};
use crate::tenfile;

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: usize,
}

/// Samples grouped by class. Every sample belongs to exactly one class list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    /// Indices into `samples`, one list per class.
    pub per_class: Vec<Vec<usize>>,
}

impl DatasetIndex {
    pub fn new(classes: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut per_class = vec![Vec::new(); classes.len()];
        for (i, s) in samples.iter().enumerate() {
            per_class
                .get_mut(s.label)
                .ok_or_else(|| {
                    ArmError::data(format!(
                        "sample {i} has label {} but only {} classes are declared",
                        s.label,
                        classes.len()
                    ))
                })?
                .push(i);
        }
        Ok(DatasetIndex {
            classes,
            samples,
            per_class,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub max: usize,
    pub min: usize,
    /// `max / min`; infinite when some class is empty.
    pub ratio: f64,
}

pub fn class_counts_report(classes: &[String], counts: &[usize]) -> ImbalanceReport {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    ImbalanceReport {
        classes: classes.to_vec(),
        counts: counts.to_vec(),
        max,
        min,
        ratio: if min == 0 { f64::INFINITY } else { max as f64 / min as f64 },
    }
}

impl DatasetIndex {
    pub fn class_counts_report(&self) -> ImbalanceReport {
        class_counts_report(&self.classes, &self.counts())
    }
}

/// Decoded images of equal extents, normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub index: DatasetIndex,
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f32>>,
}

/// Train/validation partition as lists of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// Holds out `ceil(fraction · n_c)` samples of every class, chosen with `seed`.
    pub fn holdout(index: &DatasetIndex, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(ArmError::Config(format!(
                "validation fraction {fraction} outside [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for members in &index.per_class {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            let k = (fraction * m.len() as f64).ceil() as usize;
            let k = if m.len() > 1 { k.min(m.len() - 1) } else { 0 };
            val.extend_from_slice(&m[..k]);
            train.extend_from_slice(&m[k..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok(Split { train, val })
    }

    pub fn all(index: &DatasetIndex) -> Self {
        Split {
            train: (0..index.samples.len()).collect(),
            val: Vec::new(),
        }
    }
}

/// Per-class lists restricted to `subset`.
pub fn group_by_class(index: &DatasetIndex, subset: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); index.num_classes()];
    for &i in subset {
        out[index.samples[i].label].push(i);
    }
    out
}

#[derive(Debug, Deserialize)]
struct ManifestClasses {
    classes: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    relative_path: String,
    label: String,
}

/// Reads `labels.csv` (`relative_path,label`) under `root`.
///
/// The declared class list comes from `manifest.json` when present, otherwise from
/// the sorted distinct labels.
pub fn load_index(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let declared = match fs::read(root.join(MANIFEST_FILE)) {
        Ok(bytes) => {
            let m: ManifestClasses = serde_json::from_slice(&bytes)
                .map_err(|e| ArmError::format(root.join(MANIFEST_FILE), e.to_string()))?;
            Some(m.classes)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(ArmError::io(root.join(MANIFEST_FILE), e)),
    };

    let labels_path = root.join(LABELS_FILE);
    let mut reader = csv::Reader::from_path(&labels_path)
        .map_err(|e| ArmError::format(&labels_path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ArmError::format(&labels_path, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "relative_path" || &headers[1] != "label" {
        return Err(ArmError::data(format!(
            "{}: header must be `relative_path,label`, found {:?}",
            labels_path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<LabelRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| ArmError::data(format!("{}: row {line}: {e}", labels_path.display())))?;
        rows.push((line, row));
    }

    let classes = match declared {
        Some(c) => c,
        None => {
            let mut c: Vec<String> = rows.iter().map(|(_, r)| r.label.clone()).collect();
            c.sort();
            c.dedup();
            c
        }
    };
    let lookup: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let label = *lookup.get(row.label.as_str()).ok_or_else(|| {
            ArmError::data(format!(
                "{}: row {line}: label {:?} is not a declared class",
                labels_path.display(),
                row.label
            ))
        })?;
        let rel = PathBuf::from(&row.relative_path);
        if !root.join(&rel).is_file() {
            return Err(ArmError::data(format!(
                "{}: row {line}: missing file {}",
                labels_path.display(),
                rel.display()
            )));
        }
        samples.push(Sample { path: rel, label });
    }
    DatasetIndex::new(classes, samples)
}

fn load_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ten") => {
            let t = tenfile::load(path)?;
            let (h, w) = match t.shape() {
                [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
                other => {
                    return Err(ArmError::format(path, format!("image tensor has shape {other:?}")))
                }
            };
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ArmError::format(path, "image values must lie in [0, 1]"));
            }
            Ok((h, w, t.into_data()))
        }
        _ => {
            let img = pgm::read(path)?;
            Ok((img.height, img.width, img.normalized()))
        }
    }
}

/// Loads the index and decodes every image. All images must share one extent.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<LoadedDataset> {
    let root = root.as_ref();
    let index = load_index(root)?;
    let mut images = Vec::with_capacity(index.samples.len());
    let mut extent = None;
    for s in &index.samples {
        let (h, w, px) = load_image(&root.join(&s.path))?;
        match extent {
            None => extent = Some((h, w)),
            Some(e) if e != (h, w) => {
                return Err(ArmError::data(format!(
                    "{} is {h}×{w}, expected {}×{}",
                    s.path.display(),
                    e.0,
                    e.1
                )))
            }
            _ => {}
        }
        images.push(px);
    }
    let (height, width) = extent.ok_or_else(|| ArmError::data("dataset has no samples"))?;
    Ok(LoadedDataset {
        index,
        height,
        width,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_index(counts: &[usize]) -> DatasetIndex {
        let classes = (0..counts.len()).map(|c| format!("c{c}")).collect();
        let samples = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| {
                (0..n).map(move |i| Sample {
                    path: format!("{c}_{i}.pgm").into(),
                    label: c,
                })
            })
            .collect();
        DatasetIndex::new(classes, samples).unwrap()
    }

    #[test]
    fn per_class_lists_partition_samples() {
        let idx = toy_index(&[3, 5, 7]);
        assert_eq!(idx.counts(), vec![3, 5, 7]);
        let mut all: Vec<usize> = idx.per_class.concat();
        all.sort_unstable();
        assert_eq!(all, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_label() {
        let err = DatasetIndex::new(
            vec!["a".into()],
            vec![Sample {
                path: "x".into(),
                label: 1,
            }],
        );
        assert!(matches!(err, Err(ArmError::Data(_))));
    }

    #[test]
    fn imbalance_ratios() {
        let names: Vec<String> = ["Neutral", "Happy", "Sad", "Surprise", "Fear", "Disgust", "Anger", "Contempt"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let affectnet = [74_874, 134_415, 25_459, 14_090, 6_378, 3_803, 24_882, 3_750];
        let r = class_counts_report(&names, &affectnet);
        assert_eq!((r.max, r.min), (134_415, 3_750));
        assert!((r.ratio - 35.844).abs() < 1e-3);
        assert_eq!(affectnet.iter().sum::<usize>(), 287_651);
        assert_eq!(toy_index(&[4, 4]).class_counts_report().ratio, 1.0);
        assert_eq!(toy_index(&[10, 350]).class_counts_report().ratio, 35.0);
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let idx = toy_index(&[10, 20, 5]);
        let s = Split::holdout(&idx, 0.2, 7).unwrap();
        assert_eq!(s.val.len(), 2 + 4 + 1);
        assert_eq!(s.train.len() + s.val.len(), 35);
        assert!(s.train.iter().all(|i| !s.val.contains(i)));
        assert_eq!(s, Split::holdout(&idx, 0.2, 7).unwrap());
    }
}
