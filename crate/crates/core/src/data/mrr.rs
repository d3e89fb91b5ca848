//! Minimal random resampling: each epoch draws exactly `m = min class size` samples
//! from every class, uniformly and without replacement, with fresh randomness per epoch.
//! A sample in a class of size `n_c` is therefore picked with probability `m / n_c`.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::DatasetIndex;
use crate::error::{ArmError, Result};

/// Seed for epoch `epoch` of a run seeded with `base` (splitmix64 of the pair).
pub fn epoch_seed(base: u64, epoch: u64) -> u64 {
    let mut z = base ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Balanced draw over explicit class lists. The result is shuffled across classes.
pub fn mrr_sample(per_class: &[Vec<usize>], class_names: &[String], seed: u64) -> Result<Vec<usize>> {
    if per_class.is_empty() {
        return Err(ArmError::data("no classes to resample"));
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        let name = class_names
            .get(empty)
            .cloned()
            .unwrap_or_else(|| empty.to_string());
        return Err(ArmError::data(format!("class {name:?} has no samples")));
    }
    let m = per_class.iter().map(Vec::len).min().expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m * per_class.len());
    for members in per_class {
        out.extend(index::sample(&mut rng, members.len(), m).into_iter().map(|i| members[i]));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

pub fn mrr_epoch_sample(index: &DatasetIndex, seed: u64) -> Result<Vec<usize>> {
    mrr_sample(&index.per_class, &index.classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::Sample;

    fn index_with(counts: &[usize]) -> DatasetIndex {
        let classes = (0..counts.len()).map(|c| format!("c{c}")).collect();
        let samples = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |_| Sample { path: "x".into(), label: c }))
            .collect();
        DatasetIndex::new(classes, samples).unwrap()
    }

    #[test]
    fn epoch_has_min_count_per_class() {
        let idx = index_with(&[3, 5, 7]);
        for seed in 0..20 {
            let epoch = mrr_epoch_sample(&idx, seed).unwrap();
            assert_eq!(epoch.len(), 9);
            let mut per = [0usize; 3];
            for &i in &epoch {
                per[idx.samples[i].label] += 1;
            }
            assert_eq!(per, [3, 3, 3]);
            let mut dedup = epoch.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), 9);
        }
    }

    #[test]
    fn balanced_classes_give_a_permutation() {
        let idx = index_with(&[4, 4, 4]);
        let mut epoch = mrr_epoch_sample(&idx, 9).unwrap();
        epoch.sort_unstable();
        assert_eq!(epoch, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn empty_class_is_named() {
        let mut idx = index_with(&[2, 1]);
        idx.per_class[1].clear();
        let err = mrr_epoch_sample(&idx, 0).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn epochs_differ() {
        let idx = index_with(&[2, 50]);
        assert_ne!(
            mrr_epoch_sample(&idx, epoch_seed(1, 0)).unwrap(),
            mrr_epoch_sample(&idx, epoch_seed(1, 1)).unwrap()
        );
        assert_eq!(
            mrr_epoch_sample(&idx, epoch_seed(1, 3)).unwrap(),
            mrr_epoch_sample(&idx, epoch_seed(1, 3)).unwrap()
        );
    }

    #[test]
    fn inclusion_rate_in_a_35_to_1_class() {
        // Minority class of m = 4, majority of 35·m = 140. Over 35 epochs each majority
        // sample is expected once; average that over many simulated 35-epoch windows.
        let idx = index_with(&[4, 140]);
        let epochs = 10_000u64;
        let mut hits = vec![0u64; 140];
        for e in 0..epochs {
            for i in mrr_epoch_sample(&idx, epoch_seed(17, e)).unwrap() {
                if i >= 4 {
                    hits[i - 4] += 1;
                }
            }
        }
        let per_35 = hits.iter().sum::<u64>() as f64 / 140.0 / epochs as f64 * 35.0;
        assert!((per_35 - 1.0).abs() < 0.05, "{per_35}");
        for &h in &hits {
            let rate = h as f64 / epochs as f64 * 35.0;
            assert!((rate - 1.0).abs() < 0.25, "per-sample rate {rate}");
        }
    }
}
