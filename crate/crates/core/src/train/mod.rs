//! Optimization, evaluation and the ablation harness.

pub mod ablation;
mod metrics;
mod optim;
mod trainer;

pub use metrics::{count_metrics, evaluate, CountMetrics, EvalReport, Scores};
pub use optim::AdaDelta;
pub use trainer::{
    curve_csv, refresh_norm_stats, train, train_step, EpochStats, StepLoss, TrainConfig,
    CHECKPOINT_FILE, CURVE_FILE,
};
