//! Experiment orchestration: configuration, the active-learning loop,
//! evaluation metrics, reports and the gradient check.

mod config;
mod experiment;
mod gradcheck;
mod metrics;
mod report;

pub use config::{
    DataConfig, ExperimentConfig, Mode, OptimizerConfig, QueryMode, Supervision, DEFAULT_STRIDE_FACTOR,
};
pub use experiment::{run_experiment, run_experiment_on, Dataset, ExperimentOutput, InvariantAudit};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use metrics::{class_scores, metrics, ClassMetrics, Confusion, Metrics};
pub use report::{read_csv, write_csv, CycleReport, Summary};
