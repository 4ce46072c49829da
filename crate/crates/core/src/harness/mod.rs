//! Training, evaluation and ablation runs.

pub mod ablation;
pub mod metrics;
pub mod train;

pub use ablation::{ablation_suite, rows_to_csv, AblationAxis, AblationRow, AblationRun};
pub use metrics::{format_percent, top_k_summary, ConfusionMatrix};
pub use train::{
    evaluate, score, train, Dataset, EpochSummary, EvalReport, LogEntry, TrainConfig, TrainOutcome,
};
