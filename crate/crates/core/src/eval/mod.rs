//! Patient-wise cross-validation, metrics and windowed inference.

mod experiment;
mod folds;
mod metrics;
mod window;

pub use experiment::{
    run_ssl_experiment, run_supervised_experiment, AuditRecord, ExperimentOutcome, FoldMetrics, MetricsReport,
    ProtocolConfig, SupervisedConfig,
};
pub use folds::{inner_validation_split, make_stratified_patient_folds, patient_labels, stratified_subset, FoldSplit};
pub use metrics::{auc, compute_metrics, Metrics, Summary};
pub use window::{
    default_window_grid, sweep_window, windowed_inference, StripPrediction, WindowPrediction, WindowRow,
    WindowSweepResult, STRIP_S,
};
