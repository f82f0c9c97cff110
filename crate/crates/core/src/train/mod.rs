//! Desk-scale tasks, phase-noise models, variation-aware retraining and
//! robustness sweeps.

pub mod dataset;
pub mod noise;
pub mod task;
pub mod variation;

pub use dataset::{gaussian_blobs, load_dataset, read_csv, read_idx, split_dataset, write_csv, DatasetSource};
pub use noise::{inject_phase_noise, inject_topology_noise, NoiseModel};
pub use task::{task_loss, task_metric, Batch, ClassifyTask, Dataset, MatrixFitTask, Task};
pub use variation::{
    evaluate_clean, evaluate_noisy, robustness_sweep, train_weights, variation_aware_train, SweepRow, TrainConfig,
    TrainOutcome,
};
