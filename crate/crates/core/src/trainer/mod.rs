//! Training loops for PCTL and the two baselines, evaluation, metrics and
//! the clustering-schedule ablation.
//!
//! A PCTL epoch momentum-encodes every train sample of both domains, builds
//! the prototype bank, then for each paired batch computes the total loss,
//! steps the optimizer, clamps the temperature and updates the momentum
//! encoder. The checkpoint kept is the one with the lowest target
//! validation cross-entropy.

mod ablation;
mod config;
mod eval;
mod metrics;
mod run;

pub use ablation::{
    default_conditions, mean_std, run_ablation, AblationCondition, AblationRow, AblationTable, DEFAULT_SEEDS,
};
pub use config::{ClusterConfig, LossConfig, Mode, OptimConfig, RunConfig, TrainConfig};
pub use eval::{evaluate, evaluate_records, score_predictions, Evaluation};
pub use metrics::{EpochMetrics, MetricsTable, RunMetrics};
pub use run::{
    train, train_fine_tune, train_pctl, train_target_only, train_with, EpochCallback, TrainOutcome,
};
