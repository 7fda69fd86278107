//! Dataset splitting, optimisation, training loop, metrics and complexity analysis.

mod adam;
mod complexity;
mod dataset;
mod loss;
mod metrics;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use complexity::{count_flops, count_params, measured_flops, ComplexityReport, PublishedRow, PUBLISHED_BASELINE, PUBLISHED_IMPROVED};
pub use dataset::{split_dataset, DatasetEntry, DatasetIndex, MIN_PER_CLASS};
pub use loss::cross_entropy;
pub use metrics::{evaluate, ConfusionMatrix};
pub use trainer::{train, train_step, EpochRecord, Sample, TrainConfig, TrainOutputs, TrainReport};
