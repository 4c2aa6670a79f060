//! Metrics, experiment configuration, checkpoints and stage orchestration.

mod checkpoint;
mod config;
mod data;
mod metrics;
mod runner;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointExtras, CheckpointMeta, TensorEntry, CHECKPOINT_FILE, CHECKPOINT_FORMAT};
pub use config::{DataSpec, EvaluateSpec, ExperimentConfig, FinetuneSpec, Generator, Split, Stage};
pub use data::{chanest_baselines, to_examples};
pub use metrics::{
    argmax_rows, classification_metrics, convergence_epoch, grid_mse, mse_vs_snr, positioning_metrics,
    ClassificationReport, Histogram, MseRow, MseTable, PositioningReport, HISTOGRAM_BINS,
};
pub use runner::{
    evaluate_examples, exit_code, run_experiment, EpochRecord, Evaluation, MetricReport, RunReport, Summary,
    METRICS_FILE, REPORT_FILE,
};
