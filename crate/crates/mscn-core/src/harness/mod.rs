//! Desk-scale experiment harness: dataset synthesis, supervised training,
//! evaluation, perturbation sweeps, and cross-resolution comparisons.

pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod train;

pub use dataset::{generate_dataset, load_dataset};
pub use eval::{
    cross_resolution_eval, evaluate, load_model, perturbation_sweep, resolution_variants, Model,
    ResolutionVariant, SweepGrid, SweepKind, EVAL_SEED,
};
pub use metrics::{read_csv, write_csv, EvalOutcome, MetricsRow, CSV_HEADER};
pub use train::{
    baseline_forward, load_baseline, normalize_cloud, save_baseline, train_baseline, train_source,
    BaselineParams, EpochRecord, TrainConfig,
};
