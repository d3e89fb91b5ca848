//! Datasets, balanced resampling, evaluation metrics and the synthetic corpus.

pub mod dataset;
pub mod metrics;
pub mod mrr;
pub mod pgm;
pub mod synth;

pub use dataset::{
    class_counts_report, group_by_class, load_dataset, load_index, DatasetIndex, ImbalanceReport,
    LoadedDataset, Sample, Split,
};
pub use metrics::{ConfusionMatrix, Metrics};
pub use mrr::{epoch_seed, mrr_epoch_sample, mrr_sample};
pub use synth::{synth_dataset, synth_images, synth_loaded, SynthConfig};
