//! Losses, metrics, the optimizer and the training protocol.

mod loss;
mod metrics;
mod optimizer;
mod trainer;

pub use loss::{huber_loss, log_cosh, logcosh_loss, mse_loss, HuberForm, LossConfig, LossKind};
pub use metrics::{
    average_metrics, compute_metrics, compute_metrics_lenient, mape, median_absolute_deviation, Metrics,
};
pub use optimizer::{Adam, AdamConfig};
pub use trainer::{
    evaluate, multi_run, run_seed, train_run, AveragedMetrics, EpochRecord, Evaluation, MultiRun, RunRecord, RunTiming,
    SplitIds, Timings, TrainConfig, TrainedRun, TrainingReport,
};
