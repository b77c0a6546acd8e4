//! Training loop, evaluation, metrics and the experiment runners.

mod config;
mod experiments;
mod gradcheck;
mod metrics;
mod train;

pub use config::{TaskMode, TrainConfig};
pub use experiments::{ablation_rows, format_table, run_ablation, run_task_grid, task_rows, ExperimentRow};
pub use gradcheck::{pipeline_fixture, pipeline_gradcheck, PipelineCheckConfig};
pub use metrics::{accuracy, per_class, task_metrics, weighted_f1, ClassMetrics, TaskMetrics};
pub use train::{
    evaluate, evaluate_checkpoint, evaluate_examples, model_from_checkpoint, param_group, train, train_examples, BestEpoch, EpochEval, EpochLog,
    MetricsReport, TrainOutcome, PARAM_GROUPS,
};
